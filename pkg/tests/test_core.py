import threading

import numpy as np
import pytest

from aglrtk.core import (AccessViolation, DimensionMismatch, EmptyBag, EpisodeDataset, FeatureBag, NonFiniteValue,
                         RngStream, cholesky_lower, gaussian_log_densities, parallel_map, round_half_up, softmax,
                         split_by_class, validate_bag)
from scipy.stats import multivariate_normal

def bag(bag_id, label, n=3, dim=4, domain_id=1, value=0.0):
    return FeatureBag(bag_id, domain_id, label, np.full((n, dim), value))

def test_validate_bag_ok():
    b = FeatureBag("b", 1, 0, np.random.default_rng(0).normal(size=(5, 8)))
    validate_bag(b, 8)
    assert b.embeddings.dtype == np.float32

def test_validate_bag_empty():
    b = FeatureBag("empty", 1, 0, np.zeros((0, 8)))
    with pytest.raises(EmptyBag, match="empty"):
        validate_bag(b, 8)

def test_validate_bag_nan():
    emb = np.zeros((5, 8))
    emb[2, 3] = np.nan
    with pytest.raises(NonFiniteValue, match="nanbag"):
        validate_bag(FeatureBag("nanbag", 1, 1, emb), 8)

def test_validate_bag_dim():
    with pytest.raises(DimensionMismatch, match="wide"):
        validate_bag(bag("wide", 0, dim=9), 8)

def test_validate_bag_label():
    with pytest.raises(ValueError):
        validate_bag(bag("three", 3, dim=8), 8)

def test_bag_immutable():
    b = bag("b", 0)
    with pytest.raises(ValueError):
        b.embeddings[0, 0] = 1.0

def test_split_by_class():
    b0 = bag("a", 0)
    b1 = bag("b", 1)
    b2 = bag("c", 0)
    (neg, pos) = split_by_class([b0, b1, b2])
    assert [b.bag_id for b in neg] == ["a", "c"]
    assert [b.bag_id for b in pos] == ["b"]
    assert split_by_class([]) == ([], [])
    ones = [bag(str(i), 1) for i in range(3)]
    assert split_by_class(ones) == ([], ones)

def test_episode_overlap():
    with pytest.raises(ValueError, match="both train and test"):
        EpisodeDataset(1, [bag("a", 0), bag("b", 1)], [bag("a", 0)])

def test_episode_needs_both_classes():
    with pytest.raises(ValueError, match="both classes"):
        EpisodeDataset(1, [bag("a", 0), bag("b", 0)], [])

def test_rng_stream_reproducible():
    a = RngStream(7, "x").normal(size=10)
    b = RngStream(7, "x").normal(size=10)
    c = RngStream(7, "y").normal(size=10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    np.testing.assert_array_equal(RngStream(7, "x").child("c").random(3), RngStream(7, "x/c").random(3))

def test_rng_stream_independent_of_order():
    root = RngStream(3)
    first = root.child("a").random(5)
    root.child("b").random(100)
    np.testing.assert_array_equal(root.child("a").random(5), first)

def test_round_half_up():
    assert round_half_up(1.5) == 2
    assert round_half_up(2.5) == 3
    assert round_half_up(2.49) == 2
    assert round_half_up(0.0) == 0

def test_gaussian_log_densities_match_scipy():
    rng = np.random.default_rng(1)
    means = rng.normal(size=(2, 3))
    covs = []
    for k in range(2):
        A = rng.normal(size=(3, 3))
        covs.append(A.dot(A.T) + 0.5 * np.eye(3))
    X = rng.normal(size=(20, 3)) + 10.0
    logp = gaussian_log_densities(X, means, np.array([cholesky_lower(c) for c in covs]))
    assert logp.shape == (20, 2)
    for k in range(2):
        ref = multivariate_normal(means[k], covs[k]).logpdf(X)
        np.testing.assert_allclose(logp[:, k], ref, rtol=1e-10)

def test_cholesky_jitter_on_singular():
    cov = np.ones((3, 3))
    L = cholesky_lower(cov)
    assert np.all(np.isfinite(L))
    np.testing.assert_allclose(L.dot(L.T), cov, atol=1e-6)

def test_softmax():
    np.testing.assert_allclose(softmax([1000.0, 1000.0]), [0.5, 0.5])
    assert softmax([3.0]).tolist() == [1.0]

def test_parallel_map_preserves_order():
    seen = set()
    lock = threading.Lock()
    def f(x):
        with lock:
            seen.add(threading.current_thread().name)
        return x * x
    assert parallel_map(4, f, range(20)) == [x * x for x in range(20)]
    assert parallel_map(1, f, [3]) == [9]

def test_access_violation_is_runtime_error():
    assert issubclass(AccessViolation, RuntimeError)
