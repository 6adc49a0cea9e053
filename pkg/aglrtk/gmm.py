"""Gaussian mixtures fitted by EM, BIC model selection and sampling.

Everything here runs in float64.  Component densities go through a
Cholesky factor of each covariance, responsibilities are normalised in
log space.
"""
import warnings

import numpy as np
from scipy.special import logsumexp

from aglrtk.core import (DimensionMismatch, NonFiniteValue, RngStream, cholesky_lower,
                         gaussian_log_densities, parallel_map, round_half_up)

# exp() of a sampled log-count is clamped here
MAX_SAMPLED_COUNT = 10**7

class TooFewSamples(ValueError):
    pass

class DegenerateComponent(RuntimeError):
    def __init__(self, components, message=None):
        self.components = list(components)
        if message is None:
            message = "mixture components {} lost all responsibility".format(self.components)
        super(DegenerateComponent, self).__init__(message)

class EmConfig(object):
    def __init__(self, cov_type="full", max_iterations=200, tolerance=1.0e-4, covariance_regularizer=1.0e-6,
                 n_init=3, init_method="kmeans++", n_jobs=1):
        if cov_type not in ("full", "diagonal"):
            raise ValueError("cov_type '{}' not 'full' or 'diagonal'".format(cov_type))
        if max_iterations < 1:
            raise ValueError("max_iterations {} < 1".format(max_iterations))
        if not tolerance > 0.0:
            raise ValueError("tolerance {} must be > 0".format(tolerance))
        if covariance_regularizer < 0.0:
            raise ValueError("covariance_regularizer {} must be >= 0".format(covariance_regularizer))
        if n_init < 1:
            raise ValueError("n_init {} < 1".format(n_init))
        if init_method not in ("kmeans++", "random"):
            raise ValueError("init_method '{}' not 'kmeans++' or 'random'".format(init_method))
        self.cov_type = cov_type
        self.max_iterations = int(max_iterations)
        self.tolerance = float(tolerance)
        self.covariance_regularizer = float(covariance_regularizer)
        self.n_init = int(n_init)
        self.init_method = init_method
        self.n_jobs = max(1, int(n_jobs))

    def __repr__(self):
        return ("EmConfig(cov_type={}, max_iterations={}, tolerance={}, covariance_regularizer={}, n_init={}, "
                "init_method={}, n_jobs={})").format(self.cov_type, self.max_iterations, self.tolerance,
                                                    self.covariance_regularizer, self.n_init, self.init_method, self.n_jobs)

class GmmModel(object):
    """K-component Gaussian mixture with fit diagnostics.

    covariances are (K, dim, dim) for cov_type 'full' and (K, dim) for
    'diagonal'.  Instances are treated as immutable once built.
    """
    def __init__(self, weights, means, covariances, cov_type="full", final_log_likelihood=np.nan,
                 bic=np.nan, iterations_used=0, converged=False, log_likelihood_history=None):
        self.weights = np.array(weights, dtype=np.float64).reshape(-1)
        self.means = np.atleast_2d(np.array(means, dtype=np.float64))
        self.cov_type = cov_type
        K = self.weights.shape[0]
        if self.means.shape[0] != K:
            self.means = self.means.reshape((K, -1))
        dim = self.means.shape[1]
        if cov_type == "full":
            self.covariances = np.array(covariances, dtype=np.float64).reshape((K, dim, dim))
        elif cov_type == "diagonal":
            self.covariances = np.array(covariances, dtype=np.float64).reshape((K, dim))
        else:
            raise ValueError("cov_type '{}' not 'full' or 'diagonal'".format(cov_type))
        self.final_log_likelihood = float(final_log_likelihood)
        self.bic = float(bic)
        self.iterations_used = int(iterations_used)
        self.converged = bool(converged)
        self.log_likelihood_history = list(log_likelihood_history) if log_likelihood_history is not None else []
        self.candidate_bics = {}
        self._chol = None

    @property
    def K(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def cholesky_factors(self):
        """(K, dim, dim) lower factors for 'full', (K, dim) standard deviations for 'diagonal'"""
        if self._chol is None:
            if self.cov_type == "full":
                self._chol = np.array([cholesky_lower(c) for c in self.covariances])
            else:
                self._chol = np.sqrt(self.covariances)
        return self._chol

    def component_log_prob(self, X):
        """N x K matrix of log(pi_k) + log N(x_i | mu_k, Sigma_k)"""
        chol = self.cholesky_factors()
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        if self.cov_type == "full":
            logp = gaussian_log_densities(X, self.means, chol)
        else:
            z = (X[:, np.newaxis, :] - self.means) / chol
            logp = -0.5 * (self.dim * np.log(2.0 * np.pi) + 2.0 * np.sum(np.log(chol), axis=1) +
                           np.einsum("nkd,nkd->nk", z, z))
        return logp + log_w

    def log_likelihood(self, samples):
        X = check_samples(samples, self.dim)
        return float(np.sum(logsumexp(self.component_log_prob(X), axis=1)))

    def copy_with(self, **kwargs):
        d = dict(weights=self.weights, means=self.means, covariances=self.covariances, cov_type=self.cov_type,
                 final_log_likelihood=self.final_log_likelihood, bic=self.bic, iterations_used=self.iterations_used,
                 converged=self.converged, log_likelihood_history=self.log_likelihood_history)
        d.update(kwargs)
        return GmmModel(**d)

    def as_arrays(self, prefix=""):
        return { prefix+"weights" : self.weights, prefix+"means" : self.means,
                 prefix+"covariances" : self.covariances, prefix+"cov_type" : np.array(self.cov_type),
                 prefix+"diagnostics" : np.array([self.final_log_likelihood, self.bic,
                                                  self.iterations_used, float(self.converged)]),
                 prefix+"history" : np.array(self.log_likelihood_history, dtype=np.float64) }

    @classmethod
    def from_arrays(cls, arrays, prefix=""):
        diag = arrays[prefix+"diagnostics"]
        history = arrays[prefix+"history"] if prefix+"history" in arrays else None
        return cls(arrays[prefix+"weights"], arrays[prefix+"means"], arrays[prefix+"covariances"],
                   cov_type=str(arrays[prefix+"cov_type"]), final_log_likelihood=diag[0], bic=diag[1],
                   iterations_used=int(diag[2]), converged=bool(diag[3]), log_likelihood_history=history)

    def __repr__(self):
        return "GmmModel(K={}, dim={}, cov_type={}, logL={:.6g}, bic={:.6g}, iterations={}, converged={})".format(
            self.K, self.dim, self.cov_type, self.final_log_likelihood, self.bic, self.iterations_used, self.converged)

def check_samples(samples, dim=None):
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape((-1, 1))
    if X.ndim != 2:
        raise DimensionMismatch("samples must be a 2-d array, got shape {}".format(X.shape))
    if dim is not None and X.shape[1] != dim:
        raise DimensionMismatch("samples have dim {}, model has dim {}".format(X.shape[1], dim))
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue("samples contain non-finite values")
    return X

################################################################################
# E and M steps

def _e_step(X, model):
    logp = model.component_log_prob(X)
    log_norm = logsumexp(logp, axis=1, keepdims=True)
    resp = np.exp(logp - log_norm)
    resp /= np.sum(resp, axis=1, keepdims=True)
    return (resp, float(np.sum(log_norm)))

def _m_step(X, resp, cov_type, regularizer):
    (N, dim) = X.shape
    nk = np.sum(resp, axis=0)
    dead = np.where(nk < 1.0e-12)[0]
    if len(dead) > 0:
        raise DegenerateComponent(dead)

    weights = nk / N
    weights /= np.sum(weights)
    means = np.dot(resp.T, X) / nk[:, np.newaxis]
    K = resp.shape[1]
    if cov_type == "full":
        covs = np.empty((K, dim, dim))
        for k in range(K):
            diff = X - means[k]
            cov = np.dot((resp[:, k, np.newaxis] * diff).T, diff) / nk[k]
            covs[k] = 0.5 * (cov + cov.T) + regularizer * np.eye(dim)
    else:
        covs = np.empty((K, dim))
        for k in range(K):
            diff = X - means[k]
            covs[k] = np.sum(resp[:, k, np.newaxis] * diff**2, axis=0) / nk[k] + regularizer
        covs = np.maximum(covs, np.finfo(np.float64).tiny)
    return (weights, means, covs)

def responsibilities(samples, model):
    X = check_samples(samples, model.dim)
    return _e_step(X, model)[0]

def em_step(samples, model, regularizer=1.0e-6):
    """one EM iteration: responsibilities under model, then updated weights, means
    and covariances.  The returned model carries the log-likelihood it attains."""
    X = check_samples(samples, model.dim)
    (resp, _) = _e_step(X, model)
    (weights, means, covs) = _m_step(X, resp, model.cov_type, regularizer)
    new_model = GmmModel(weights, means, covs, cov_type=model.cov_type,
                         iterations_used=model.iterations_used+1)
    new_model.final_log_likelihood = new_model.log_likelihood(X)
    return new_model

################################################################################
# fitting

def _global_covariance(X, cov_type, regularizer):
    dim = X.shape[1]
    if cov_type == "full":
        cov = np.atleast_2d(np.cov(X.T, bias=True)).reshape((dim, dim))
        return cov + regularizer * np.eye(dim)
    else:
        return np.maximum(np.var(X, axis=0) + regularizer, np.finfo(np.float64).tiny)

def _seed_means(X, K, init_method, rng):
    N = X.shape[0]
    if init_method == "random":
        return X[rng.choice(N, size=K, replace=False)].copy()

    # k-means++ seeding: new centers drawn with probability ~ squared distance
    centers = [X[rng.integers(0, N)]]
    d2 = np.sum((X - centers[0])**2, axis=1)
    for k in range(1, K):
        total = np.sum(d2)
        if total <= 0.0:
            idx = rng.integers(0, N)
        else:
            idx = rng.choice(N, p=d2/total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx])**2, axis=1))
    return np.array(centers)

def _initial_model(X, K, config, rng):
    means = _seed_means(X, K, config.init_method, rng)
    cov = _global_covariance(X, config.cov_type, config.covariance_regularizer)
    covs = np.array([cov] * K)
    return GmmModel(np.ones(K) / K, means, covs, cov_type=config.cov_type)

def _reinitialize(model, components, X, config, rng):
    weights = model.weights.copy()
    means = model.means.copy()
    covs = model.covariances.copy()
    cov = _global_covariance(X, config.cov_type, config.covariance_regularizer)
    for k in components:
        means[k] = X[rng.integers(0, X.shape[0])]
        covs[k] = cov
        weights[k] = 1.0 / model.K
    return GmmModel(weights / np.sum(weights), means, covs, cov_type=model.cov_type)

def _fit_single(X, K, config, rng):
    N = X.shape[0]
    model = _initial_model(X, K, config, rng)
    (resp, ll) = _e_step(X, model)
    history = [ll]
    converged = False
    n_iter = 0
    while n_iter < config.max_iterations:
        n_iter += 1
        try:
            (weights, means, covs) = _m_step(X, resp, config.cov_type, config.covariance_regularizer)
            model = GmmModel(weights, means, covs, cov_type=config.cov_type)
        except DegenerateComponent as exc:
            warnings.warn("K={} fit: reinitializing collapsed components {} from random samples".format(K, exc.components))
            model = _reinitialize(model, exc.components, X, config, rng)
        (resp, new_ll) = _e_step(X, model)
        history.append(new_ll)
        if abs(new_ll - ll) / N < config.tolerance:
            ll = new_ll
            converged = True
            break
        ll = new_ll

    return model.copy_with(final_log_likelihood=ll, iterations_used=n_iter, converged=converged,
                           log_likelihood_history=history)

def fit_em(samples, K, config=None, rng=None):
    """best of config.n_init EM runs (by final log-likelihood) for a K-component mixture"""
    if config is None:
        config = EmConfig()
    if rng is None:
        rng = RngStream(0, "fit_em")
    X = check_samples(samples)
    K = int(K)
    if K < 1:
        raise ValueError("K {} < 1".format(K))
    if X.shape[0] < K:
        raise TooFewSamples("{} samples cannot support K={} components".format(X.shape[0], K))

    streams = [rng.child("restart{}".format(r)) for r in range(config.n_init)]
    fits = parallel_map(config.n_jobs, lambda s: _fit_single(X, K, config, s), streams)

    best = fits[0]
    for m in fits[1:]:
        if m.final_log_likelihood > best.final_log_likelihood:
            best = m
    best.bic = bic(best, X)
    return best

def n_parameters(K, dim, cov_type):
    if cov_type == "full":
        cov_params = K * dim * (dim + 1) // 2
    elif cov_type == "diagonal":
        cov_params = K * dim
    else:
        raise ValueError("cov_type '{}' not 'full' or 'diagonal'".format(cov_type))
    return (K - 1) + K * dim + cov_params

def bic(model, samples):
    X = check_samples(samples, model.dim)
    return -2.0 * model.log_likelihood(X) + n_parameters(model.K, model.dim, model.cov_type) * np.log(X.shape[0])

def select_k(samples, candidates, config=None, rng=None):
    """BIC-minimising fit over the feasible (K <= N) candidates, ties to smaller K"""
    if config is None:
        config = EmConfig()
    if rng is None:
        rng = RngStream(0, "select_k")
    X = check_samples(samples)
    candidates = sorted(set(int(k) for k in candidates))
    if len(candidates) == 0:
        raise ValueError("no K candidates given")
    feasible = [k for k in candidates if 1 <= k <= X.shape[0]]
    if len(feasible) == 0:
        raise TooFewSamples("{} samples are fewer than every K candidate {}".format(X.shape[0], candidates))

    models = parallel_map(config.n_jobs, lambda k: fit_em(X, k, config, rng.child("K{}".format(k))), feasible)
    best = models[0]
    for m in models[1:]:
        if m.bic < best.bic:
            best = m
    best.candidate_bics = dict((m.K, m.bic) for m in models)
    return best

################################################################################
# sampling

def sample_embeddings(model, count, rng):
    count = int(count)
    if count < 1:
        raise ValueError("sample count {} < 1".format(count))
    comps = rng.choice(model.K, size=count, p=model.weights / np.sum(model.weights))
    z = rng.standard_normal((count, model.dim))
    chol = model.cholesky_factors()
    if model.cov_type == "full":
        return model.means[comps] + np.einsum("nij,nj->ni", chol[comps], z)
    else:
        return model.means[comps] + chol[comps] * z

def fit_count_model(counts, candidates, config=None, rng=None):
    """1-d mixture over ln(count), K chosen by BIC"""
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    if counts.size == 0:
        raise TooFewSamples("no bag sizes to fit a count model on")
    if np.any(counts < 1):
        raise ValueError("bag sizes must be >= 1, got min {}".format(np.min(counts)))
    return select_k(np.log(counts).reshape((-1, 1)), candidates, config, rng)

def sample_count(model, rng):
    x = sample_embeddings(model, 1, rng)[0, 0]
    x = min(x, np.log(MAX_SAMPLED_COUNT))
    return max(1, round_half_up(np.exp(x)))
