import filecmp
import os

import numpy as np
import pytest

from aglrtk.bagfile import write_suite
from aglrtk.core import RngStream
from aglrtk.metrics import auroc
from aglrtk.synthetic import SyntheticDomainSpec, generate_suite, n_witnesses, signal_direction

def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticDomainSpec(dim=1)
    with pytest.raises(ValueError):
        SyntheticDomainSpec(mix=1.5)
    with pytest.raises(ValueError):
        SyntheticDomainSpec(witness_rate=0.0)
    with pytest.raises(ValueError):
        SyntheticDomainSpec(bag_size=(10, 5))

def test_rotation_angle():
    spec = SyntheticDomainSpec(domains=3, mix=1.0)
    assert spec.rotation_angle(1) == 0.0
    assert spec.rotation_angle(3) == pytest.approx(0.75 * np.pi)
    assert spec.rotation_angle(2) == pytest.approx(0.375 * np.pi)
    assert SyntheticDomainSpec(domains=3, mix=0.5).rotation_angle(3) == pytest.approx(0.375 * np.pi)
    assert SyntheticDomainSpec(domains=1).rotation_angle(1) == 0.0

def test_n_witnesses():
    spec = SyntheticDomainSpec(witness_rate=0.2)
    assert n_witnesses(spec, 50) == 10
    assert n_witnesses(spec, 1) == 1
    assert n_witnesses(spec, 3) == 1
    assert n_witnesses(SyntheticDomainSpec(witness_rate=1.0), 7) == 7

def test_suite_layout():
    spec = SyntheticDomainSpec(dim=6, domains=2, train_bags=3, test_bags=2, bag_size=(5, 9), name="lay")
    episodes = generate_suite(spec, RngStream(0))
    assert [ep.domain_id for ep in episodes] == [1, 2]
    for ep in episodes:
        assert len(ep.train) == 6
        assert len(ep.test) == 4
        assert sum(b.label for b in ep.train) == 3
        for b in ep.train + ep.test:
            assert 5 <= b.n <= 9
            assert b.dim == 6
            assert b.domain_id == ep.domain_id
            assert not b.synthetic
            assert b.embeddings.dtype == np.float32
    assert episodes[1].test[0].bag_id == "lay_d2_test_c0_003"

def test_noiseless_witnesses_follow_rotated_signal():
    spec = SyntheticDomainSpec(dim=5, domains=3, train_bags=1, test_bags=0, bag_size=(4, 4), witness_rate=1.0,
                               noise=0.0, signal=3.0, mix=1.0)
    rng = RngStream(11, "suite")
    episodes = generate_suite(spec, rng)
    u = signal_direction(spec, rng)
    background = rng.child("background").standard_normal(5)
    for (t, ep) in enumerate(episodes, 1):
        neg = [b for b in ep.train if b.label == 0][0].embeddings.astype(np.float64)
        pos = [b for b in ep.train if b.label == 1][0].embeddings.astype(np.float64)
        np.testing.assert_allclose(neg, np.tile(neg[0], (4, 1)), atol=1e-5)
        diff = pos - neg
        np.testing.assert_allclose(np.linalg.norm(diff, axis=1), 3.0, atol=1e-4)
        theta = spec.rotation_angle(t)
        np.testing.assert_allclose(np.dot(diff, u), 3.0 * np.cos(theta), atol=1e-4)
        # rotation pivots on the background/witness midpoint
        np.testing.assert_allclose(np.dot(neg[0] - background, u), 1.5 * (1.0 - np.cos(theta)), atol=1e-4)

def test_later_negatives_overlap_first_witnesses():
    spec = SyntheticDomainSpec(dim=5, domains=3, train_bags=1, test_bags=0, bag_size=(4, 4), witness_rate=1.0,
                               noise=0.0, signal=3.0, shift=0.0)
    rng = RngStream(2, "suite")
    episodes = generate_suite(spec, rng)
    u = signal_direction(spec, rng)
    first_witness = [b for b in episodes[0].train if b.label == 1][0].embeddings[0].astype(np.float64)
    first_background = [b for b in episodes[0].train if b.label == 0][0].embeddings[0].astype(np.float64)
    last_background = [b for b in episodes[2].train if b.label == 0][0].embeddings[0].astype(np.float64)
    assert np.dot(last_background - first_background, u) > 0.8 * 3.0
    assert np.linalg.norm(last_background - first_witness) < np.linalg.norm(last_background - first_background)

def test_deterministic(tmp_path):
    spec = SyntheticDomainSpec(dim=4, domains=2, train_bags=2, test_bags=1, bag_size=(3, 6))
    a = generate_suite(spec, RngStream(3))
    b = generate_suite(spec, RngStream(3))
    c = generate_suite(spec, RngStream(4))
    for (x, y) in zip(a, b):
        assert x.train == y.train
        assert x.test == y.test
    assert a[0].train != c[0].train

    write_suite(a, str(tmp_path / "a"), "det")
    write_suite(b, str(tmp_path / "b"), "det")
    names = sorted(os.listdir(str(tmp_path / "a" / "bags")))
    (match, mismatch, errors) = filecmp.cmpfiles(str(tmp_path / "a" / "bags"), str(tmp_path / "b" / "bags"), names,
                                                 shallow=False)
    assert len(match) == len(names)
    assert filecmp.cmp(str(tmp_path / "a" / "manifest.txt"), str(tmp_path / "b" / "manifest.txt"), shallow=False)

def _bag_means(bags):
    return np.array([np.mean(b.embeddings.astype(np.float64), axis=0) for b in bags])

def _mean_readout(episode):
    """linear read-out of bag means: projection onto the class-mean difference of the train split"""
    neg = [b for b in episode.train if b.label == 0]
    pos = [b for b in episode.train if b.label == 1]
    w = np.mean(_bag_means(pos), axis=0) - np.mean(_bag_means(neg), axis=0)
    return lambda bags: np.dot(_bag_means(bags), w)

def _readout_auroc(readout, episode):
    return auroc([b.label for b in episode.test], readout(episode.test))

@pytest.mark.parametrize("seed", [0, 1])
def test_domain_shift_defeats_first_domain_readout(seed):
    episodes = generate_suite(SyntheticDomainSpec(), RngStream(seed, "suite"))
    readout = _mean_readout(episodes[0])
    assert _readout_auroc(readout, episodes[0]) >= 0.9
    assert _readout_auroc(readout, episodes[-1]) <= 0.75

def test_single_domain_has_no_shift():
    spec = SyntheticDomainSpec(domains=1, train_bags=20, test_bags=10)
    (episode,) = generate_suite(spec, RngStream(5, "suite"))
    assert _readout_auroc(_mean_readout(episode), episode) >= 0.9

def test_two_dimensional_suite():
    spec = SyntheticDomainSpec(dim=2, domains=2, train_bags=2, test_bags=1, bag_size=(3, 5))
    episodes = generate_suite(spec, RngStream(0))
    assert all(np.all(np.isfinite(b.embeddings)) for ep in episodes for b in ep.train + ep.test)
