"""Domain types shared by the whole toolkit: bags of instance embeddings,
episode datasets, labelled random streams and a few dense linear algebra
helpers used by the mixture and MIL code.
"""
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.linalg

class DimensionMismatch(ValueError):
    pass
class EmptyBag(ValueError):
    pass
class NonFiniteValue(ValueError):
    pass
class AccessViolation(RuntimeError):
    pass

class FeatureBag(object):
    """One slide, as an n x D matrix of float32 instance embeddings.

    Embeddings are copied into a read-only array, so a bag can be shared
    freely once built.  Construction does not validate, use validate_bag().
    """
    def __init__(self, bag_id, domain_id, label, embeddings, synthetic=False):
        self.bag_id = str(bag_id)
        self.domain_id = int(domain_id)
        self.label = int(label)
        emb = np.array(embeddings, dtype=np.float32)
        if emb.ndim == 1:
            emb = emb.reshape((-1, 1)) if emb.size > 0 else emb.reshape((0, 0))
        emb.flags.writeable = False
        self.embeddings = emb
        self.synthetic = bool(synthetic)

    @property
    def n(self):
        return self.embeddings.shape[0]

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, FeatureBag):
            return NotImplemented
        return (self.bag_id == other.bag_id and self.domain_id == other.domain_id and
                self.label == other.label and self.synthetic == other.synthetic and
                self.embeddings.shape == other.embeddings.shape and
                np.array_equal(self.embeddings, other.embeddings))

    def __ne__(self, other):
        eq = self.__eq__(other)
        return eq if eq is NotImplemented else not eq

    __hash__ = None

    def __repr__(self):
        return "FeatureBag({}, domain={}, label={}, n={}, D={}{})".format(
            self.bag_id, self.domain_id, self.label, self.n, self.dim, ", synthetic" if self.synthetic else "")

class EpisodeDataset(object):
    def __init__(self, domain_id, train, test):
        self.domain_id = int(domain_id)
        self.train = list(train)
        self.test = list(test)

        overlap = set(b.bag_id for b in self.train) & set(b.bag_id for b in self.test)
        if len(overlap) > 0:
            raise ValueError("episode {} has bag_ids in both train and test: {}".format(
                self.domain_id, sorted(overlap)[:5]))
        (neg, pos) = split_by_class(self.train)
        if len(neg) == 0 or len(pos) == 0:
            raise ValueError("episode {} train split needs both classes, got {}/{}".format(
                self.domain_id, len(neg), len(pos)))

    def __repr__(self):
        return "EpisodeDataset(domain={}, train={}, test={})".format(self.domain_id, len(self.train), len(self.test))

class RngStream(object):
    """Random stream keyed by (seed, label).

    The key goes through numpy's SeedSequence, so streams with different
    labels are independent and a (seed, label) pair gives the same draws
    regardless of which other streams were used first.
    """
    def __init__(self, seed, label="root"):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.label = str(label)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, zlib.crc32(self.label.encode("utf-8"))]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, label):
        return RngStream(self.seed, self.label + "/" + str(label))

    def __repr__(self):
        return "RngStream(seed={}, label='{}')".format(self.seed, self.label)

    # thin wrappers so callers don't need to reach into .generator
    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

def validate_bag(bag, expected_dim):
    emb = bag.embeddings
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise EmptyBag("bag '{}' has no instances".format(bag.bag_id))
    if emb.shape[1] != expected_dim:
        raise DimensionMismatch("bag '{}' has D={}, expected {}".format(bag.bag_id, emb.shape[1], expected_dim))
    if not np.all(np.isfinite(emb)):
        raise NonFiniteValue("bag '{}' has {} non-finite embedding entries".format(
            bag.bag_id, np.sum(~np.isfinite(emb))))
    if bag.label not in (0, 1):
        raise ValueError("bag '{}' has label {} not in {{0,1}}".format(bag.bag_id, bag.label))

def split_by_class(bags):
    neg = [b for b in bags if b.label == 0]
    pos = [b for b in bags if b.label == 1]
    return (neg, pos)

def round_half_up(x):
    return int(np.floor(x + 0.5))

################################################################################
# linear algebra

def cholesky_lower(cov, jitter=0.0, max_tries=6):
    """lower Cholesky factor of a symmetric matrix, adding growing diagonal
    jitter if the plain factorisation fails"""
    cov = 0.5 * (cov + cov.T)
    try:
        return scipy.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        pass
    scale = max(np.mean(np.abs(np.diag(cov))), 1.0e-12)
    extra = max(jitter, 1.0e-10 * scale)
    for i in range(max_tries):
        try:
            return scipy.linalg.cholesky(cov + extra * np.eye(cov.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            extra *= 100.0
    raise np.linalg.LinAlgError("matrix is not positive definite even with jitter {}".format(extra))

def gaussian_log_densities(X, means, chols):
    """N x K matrix of log N(x_i | means[k], L_k L_k^T), each L_k lower triangular"""
    (N, dim) = X.shape
    K = means.shape[0]
    eye = np.eye(dim)
    inv = np.array([scipy.linalg.solve_triangular(L, eye, lower=True) for L in chols])
    # whitened residuals L_k^-1 (x_i - mu_k) of every component from one product
    Y = np.dot(X, inv.transpose(2, 0, 1).reshape((dim, K * dim))).reshape((N, K, dim))
    Y -= np.einsum("kab,kb->ka", inv, means)
    # -0.5*log(|det(sigma)|) = -sum(log(diag(L)))
    log_det = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    maha = np.einsum("nkd,nkd->nk", Y, Y)
    return -0.5 * (dim * np.log(2.0 * np.pi) + log_det + maha)

def softmax(v):
    v = np.asarray(v)
    e = np.exp(v - np.max(v))
    return e / np.sum(e)

def parallel_map(n_jobs, func, items):
    """list(map(func, items)), on a thread pool when n_jobs > 1; result order follows items"""
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(n_jobs, len(items))) as pool:
        return list(pool.map(func, items))
