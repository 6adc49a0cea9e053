import numpy as np
import pytest

from aglrtk.core import AccessViolation, EpisodeDataset, FeatureBag, RngStream, validate_bag
from aglrtk.gmm import EmConfig, GmmModel
from aglrtk.mil import MilParams
from aglrtk.replay import (GmmFamily, ReplayConfig, assemble_hybrid, assert_synthetic_only, build_replay_set,
                           class_quotas, filter_top_q, fit_family, synthesize_bag)

FAST_EM = EmConfig(n_init=1, max_iterations=50)

def point_family(domain_id, class_counts, dim=3, count=200, means=((0.0,), (1.0,))):
    """family whose models are (nearly) point masses"""
    emb = {}
    cnt = {}
    for c in (0, 1):
        emb[c] = GmmModel([1.0], [np.full(dim, means[c][0])], [1.0e-8 * np.eye(dim)])
        cnt[c] = GmmModel([1.0], [[np.log(count)]], [[[1.0e-8]]])
    return GmmFamily(domain_id, emb, cnt, class_counts, 80.0, dim)

def episode(domain_id=1, sizes=(50, 50), n_bags=(3, 2), dim=3, seed=0):
    rng = np.random.default_rng(seed)
    train = []
    for label in (0, 1):
        for j in range(n_bags[label]):
            X = rng.normal(size=(sizes[label], dim)) + 2.0 * label
            train.append(FeatureBag("d{}c{}_{}".format(domain_id, label, j), domain_id, label, X))
    return EpisodeDataset(domain_id, train, [])

def test_filter_top_q_count():
    rng = np.random.default_rng(0)
    E = rng.normal(size=(10, 2))
    assert filter_top_q(E, rng.random(10), 80).shape == (8, 2)
    assert filter_top_q(E[:1], [1.0], 10).shape == (1, 2)

def test_filter_top_q_ties_and_order():
    E = np.arange(10.0).reshape((5, 2))
    np.testing.assert_array_equal(filter_top_q(E, np.full(5, 0.2), 40), E[:2])
    kept = filter_top_q(E, [0.1, 0.5, 0.05, 0.3, 0.05], 60)
    np.testing.assert_array_equal(kept, E[[0, 1, 3]])

def test_filter_monotone():
    rng = np.random.default_rng(1)
    a = rng.random(37)
    E = np.arange(37.0).reshape((37, 1))
    kept = filter_top_q(E, a, 80)[:, 0].astype(int)
    dropped = np.setdiff1d(np.arange(37), kept)
    assert np.min(a[kept]) >= np.max(a[dropped])

def test_filter_bad_q():
    with pytest.raises(ValueError):
        filter_top_q(np.zeros((3, 1)), np.ones(3), 0.0)
    with pytest.raises(ValueError):
        ReplayConfig(q=120)

def test_fit_family_sample_counts():
    ep = episode(sizes=(50, 50), n_bags=(3, 2))
    params = MilParams.init(3, 8, 4, RngStream(0))
    config = ReplayConfig(emb_k_candidates=(1, 2), count_k_candidates=(1,))
    family = fit_family(ep, params, config, FAST_EM, RngStream(0))
    assert family.fit_sample_counts[1] == 2 * 40
    assert family.fit_sample_counts[0] == 3 * 40
    assert family.class_counts == (3, 2)
    assert family.emb_dim == 3

    off = fit_family(ep, params, ReplayConfig(emb_k_candidates=(1, 2), count_k_candidates=(1,),
                                              attention_filtering=False), FAST_EM, RngStream(0))
    assert off.fit_sample_counts[1] == 100
    assert not off.attention_filtering

def test_fit_family_ragged_bags():
    rng = np.random.default_rng(2)
    sizes = [7, 13, 1]
    train = [FeatureBag("p{}".format(i), 1, 1, rng.normal(size=(n, 2))) for (i, n) in enumerate(sizes)]
    train += [FeatureBag("n{}".format(i), 1, 0, rng.normal(size=(20, 2))) for i in range(2)]
    params = MilParams.init(2, 8, 4, RngStream(0))
    config = ReplayConfig(q=50, emb_k_candidates=(1,), count_k_candidates=(1,))
    family = fit_family(EpisodeDataset(1, train, []), params, config, FAST_EM, RngStream(0))
    assert family.fit_sample_counts[1] == sum(max(1, int(np.floor(0.5 * n))) for n in sizes)

def test_fit_family_deterministic():
    ep = episode()
    params = MilParams.init(3, 8, 4, RngStream(0))
    config = ReplayConfig(emb_k_candidates=(1, 2, 3), count_k_candidates=(1, 2))
    a = fit_family(ep, params, config, FAST_EM, RngStream(4))
    b = fit_family(ep, params, config, FAST_EM, RngStream(4))
    for c in (0, 1):
        np.testing.assert_array_equal(a.emb_models[c].means, b.emb_models[c].means)
        np.testing.assert_array_equal(a.count_models[c].covariances, b.count_models[c].covariances)

def test_fit_family_falls_back_to_feasible_k():
    ep = episode(sizes=(3, 3), n_bags=(2, 2))
    params = MilParams.init(3, 8, 4, RngStream(0))
    config = ReplayConfig(emb_k_candidates=(8, 16), count_k_candidates=(1,))
    with pytest.warns(UserWarning, match="falling back"):
        family = fit_family(ep, params, config, FAST_EM, RngStream(0))
    # 2 bags of 3 instances, q=80 keeps 2 per bag
    assert family.emb_models[1].K == 4

def test_family_fidelity():
    """synthetic class means match the known generating mixture within 3 standard errors"""
    rng = np.random.default_rng(5)
    true_means = {0 : np.array([[0.0, 0.0], [4.0, 0.0]]), 1 : np.array([[0.0, 4.0], [4.0, 4.0]])}
    train = []
    for c in (0, 1):
        for j in range(10):
            comps = rng.integers(0, 2, size=60)
            X = true_means[c][comps] + rng.normal(size=(60, 2))
            train.append(FeatureBag("c{}_{}".format(c, j), 1, c, X))
    params = MilParams.init(2, 8, 4, RngStream(0))
    config = ReplayConfig(emb_k_candidates=(1, 2, 3), count_k_candidates=(1,), attention_filtering=False)
    family = fit_family(EpisodeDataset(1, train, []), params, config, EmConfig(), RngStream(1))

    for c in (0, 1):
        X = np.concatenate([synthesize_bag(family, c, 1, RngStream(j, "fid")).embeddings for j in range(100)])
        mix_mean = np.mean(true_means[c], axis=0)
        # per-coordinate sd of the generating mixture: unit noise plus half the component spread
        sd = np.sqrt(1.0 + np.var(true_means[c], axis=0))
        fit_se = sd / np.sqrt(600)
        sample_se = sd / np.sqrt(len(X))
        assert np.all(np.abs(np.mean(X, axis=0) - mix_mean) < 3.0 * (fit_se + sample_se))

def test_synthesize_bag():
    family = point_family(4, (5, 5), count=200)
    bag = synthesize_bag(family, 1, 4, RngStream(0))
    assert bag.synthetic
    assert bag.domain_id == 4
    assert bag.label == 1
    assert abs(bag.n - 200) <= 1
    validate_bag(bag, 3)
    np.testing.assert_allclose(bag.embeddings, 1.0, atol=1e-2)
    assert synthesize_bag(family, 1, 4, RngStream(0)) == bag

def test_synthesize_bag_bad_class():
    family = point_family(1, (5, 5))
    with pytest.raises(ValueError):
        synthesize_bag(family, 2, 1, RngStream(0))

def test_synthesize_bag_domain_mismatch():
    family = point_family(3, (5, 5))
    with pytest.raises(ValueError, match="domain"):
        synthesize_bag(family, 0, 2, RngStream(0))

def test_class_quotas():
    assert class_quotas(37, (28, 9)) == (28, 9)
    assert class_quotas(3, (1, 1)) == (2, 1)
    assert class_quotas(10, (1, 0)) == (10, 0)

def test_build_replay_set_sizes():
    families = [point_family(1, (28, 9), count=20)]
    bags = build_replay_set(families, 37, RngStream(0))
    assert len(bags) == 37
    assert sum(1 for b in bags if b.label == 0) == 28
    assert all(b.synthetic and b.domain_id == 1 for b in bags)

    families.append(point_family(2, (1, 1), count=20))
    bags = build_replay_set(families, 10, RngStream(0))
    assert len(bags) == 20
    assert len(set(b.bag_id for b in bags)) == 20
    d2 = [b for b in bags if b.domain_id == 2]
    assert abs(sum(b.label for b in d2) / 10.0 - 0.5) <= 1.0 / 10

def test_build_replay_set_fresh_each_call():
    families = [point_family(1, (5, 5), count=20, means=((0.0,), (0.0,)))]
    families[0].emb_models[0] = GmmModel([1.0], [np.zeros(3)], [np.eye(3)])
    a = build_replay_set(families, 4, RngStream(0, "a"))
    b = build_replay_set(families, 4, RngStream(0, "b"))
    assert not np.array_equal(a[0].embeddings, b[0].embeddings)

def test_build_replay_set_errors():
    with pytest.raises(ValueError):
        build_replay_set([], 10, RngStream(0))
    with pytest.raises(ValueError):
        build_replay_set([point_family(1, (1, 1))], 0, RngStream(0))

def test_assemble_hybrid():
    real = episode().train
    syn = build_replay_set([point_family(1, (1, 1), count=5)], 5, RngStream(0))
    hybrid = assemble_hybrid(real, syn, RngStream(1))
    assert len(hybrid) == 10
    assert sorted(b.bag_id for b in hybrid) == sorted(b.bag_id for b in real + syn)
    assert [b.bag_id for b in assemble_hybrid(real, syn, RngStream(1))] == [b.bag_id for b in hybrid]
    assert sorted(b.bag_id for b in assemble_hybrid(real, [], RngStream(1))) == sorted(b.bag_id for b in real)

def test_assert_synthetic_only():
    real_past = episode(domain_id=1).train
    assert_synthetic_only(episode(domain_id=2).train, 2)
    with pytest.raises(AccessViolation):
        assert_synthetic_only(real_past, 2)

def test_family_invariants():
    with pytest.raises(ValueError):
        point_family(1, (0, 0))
    family = point_family(1, (2, 3))
    with pytest.raises(ValueError):
        GmmFamily(1, {0 : family.emb_models[0]}, family.count_models, (2, 3), 80.0, 4)
    assert family.n_components() == {"emb0" : 1, "emb1" : 1, "count0" : 1, "count1" : 1}
