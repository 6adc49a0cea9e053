"""Generative latent replay: attention-filtered class-wise GMM families per
episode, and synthetic bags drawn from them in later episodes.
"""
import warnings
import numpy as np

from aglrtk.core import (AccessViolation, FeatureBag, round_half_up, split_by_class)
from aglrtk.gmm import (EmConfig, TooFewSamples, fit_count_model, fit_em, sample_count,
                        sample_embeddings, select_k)
from aglrtk.mil import attention_scores

class ReplayConfig(object):
    def __init__(self, q=80.0, emb_k_candidates=(8, 16, 24), count_k_candidates=(1, 2, 3, 4, 5),
                 attention_filtering=True):
        if not (0.0 < q <= 100.0):
            raise ValueError("q {} not in (0, 100]".format(q))
        if len(emb_k_candidates) == 0 or len(count_k_candidates) == 0:
            raise ValueError("K candidate lists must be nonempty")
        self.q = float(q)
        self.emb_k_candidates = tuple(int(k) for k in emb_k_candidates)
        self.count_k_candidates = tuple(int(k) for k in count_k_candidates)
        self.attention_filtering = bool(attention_filtering)

    def __repr__(self):
        return "ReplayConfig(q={}, emb_k_candidates={}, count_k_candidates={}, attention_filtering={})".format(
            self.q, self.emb_k_candidates, self.count_k_candidates, self.attention_filtering)

class GmmFamily(object):
    """everything kept from a past episode: per-class embedding and bag-size
    mixtures plus the class counts of its train split"""
    def __init__(self, domain_id, emb_models, count_models, class_counts, q_used, emb_dim,
                 attention_filtering=True, fit_sample_counts=None):
        self.domain_id = int(domain_id)
        self.emb_models = dict(emb_models)
        self.count_models = dict(count_models)
        self.class_counts = (int(class_counts[0]), int(class_counts[1]))
        self.q_used = float(q_used)
        self.emb_dim = int(emb_dim)
        self.attention_filtering = bool(attention_filtering)
        # number of embedding rows each class model was fitted on
        self.fit_sample_counts = dict(fit_sample_counts) if fit_sample_counts is not None else {}

        if sum(self.class_counts) <= 0:
            raise ValueError("family {} has no observed bags".format(self.domain_id))
        for (c, model) in self.emb_models.items():
            if model.dim != self.emb_dim:
                raise ValueError("family {} class {} embedding model has dim {} != {}".format(
                    self.domain_id, c, model.dim, self.emb_dim))

    def n_components(self):
        sizes = {}
        for (c, m) in self.emb_models.items():
            sizes["emb{}".format(c)] = m.K
        for (c, m) in self.count_models.items():
            sizes["count{}".format(c)] = m.K
        return sizes

    def __repr__(self):
        return "GmmFamily(domain={}, class_counts={}, q={}, components={})".format(
            self.domain_id, self.class_counts, self.q_used, self.n_components())

def filter_top_q(embeddings, attention, q):
    """rows with the largest attention, m = max(1, floor(q n / 100)) of them,
    returned in their original order; ties go to the lower index"""
    attention = np.asarray(attention).reshape(-1)
    n = embeddings.shape[0]
    if attention.shape[0] != n:
        raise ValueError("attention has {} entries for {} instances".format(attention.shape[0], n))
    if not (0.0 < q <= 100.0):
        raise ValueError("q {} not in (0, 100]".format(q))
    m = max(1, int(np.floor(q * n / 100.0)))
    # lexsort: last key is primary
    order = np.lexsort((np.arange(n), -attention.astype(np.float64)))
    keep = np.sort(order[:m])
    return embeddings[keep]

def _class_samples(bags, params, config):
    if config.attention_filtering:
        rows = [filter_top_q(b.embeddings, attention_scores(b, params), config.q) for b in bags]
    else:
        rows = [b.embeddings for b in bags]
    return np.concatenate([np.asarray(r, dtype=np.float64) for r in rows], axis=0)

def _fit_embedding_model(samples, config, em_config, rng, label):
    try:
        return select_k(samples, config.emb_k_candidates, em_config, rng)
    except TooFewSamples:
        K = min(samples.shape[0], max(config.emb_k_candidates))
        warnings.warn("{}: {} embedding samples below every K candidate {}, falling back to K={}".format(
            label, samples.shape[0], config.emb_k_candidates, K))
        return fit_em(samples, K, em_config, rng.child("fallback"))

def fit_family(dataset, params, config=None, em_config=None, rng=None):
    if config is None:
        config = ReplayConfig()
    if em_config is None:
        em_config = EmConfig()
    (neg, pos) = split_by_class(dataset.train)
    if len(neg) == 0 or len(pos) == 0:
        raise ValueError("episode {} needs both classes to fit a family, got {}/{}".format(
            dataset.domain_id, len(neg), len(pos)))

    emb_models = {}
    count_models = {}
    fit_counts = {}
    for (c, bags) in ((0, neg), (1, pos)):
        samples = _class_samples(bags, params, config)
        fit_counts[c] = samples.shape[0]
        label = "episode {} class {}".format(dataset.domain_id, c)
        emb_models[c] = _fit_embedding_model(samples, config, em_config, rng.child("emb{}".format(c)), label)
        count_models[c] = fit_count_model([b.n for b in bags], config.count_k_candidates, em_config,
                                          rng.child("count{}".format(c)))

    return GmmFamily(dataset.domain_id, emb_models, count_models, (len(neg), len(pos)), config.q,
                     dataset.train[0].dim, attention_filtering=config.attention_filtering,
                     fit_sample_counts=fit_counts)

def synthesize_bag(family, class_label, domain_id, rng, bag_id=None):
    if class_label not in family.emb_models or class_label not in family.count_models:
        raise ValueError("family {} has no models for class {}".format(family.domain_id, class_label))
    if int(domain_id) != family.domain_id:
        raise ValueError("synthetic bag domain {} does not match family domain {}".format(domain_id, family.domain_id))
    n_hat = sample_count(family.count_models[class_label], rng.child("count"))
    emb = sample_embeddings(family.emb_models[class_label], n_hat, rng.child("emb"))
    if bag_id is None:
        bag_id = "syn-d{}-c{}".format(family.domain_id, class_label)
    return FeatureBag(bag_id, family.domain_id, class_label, emb.astype(np.float32), synthetic=True)

def class_quotas(size, class_counts):
    """class 0 gets round(size * ratio0) (half up), class 1 the rest"""
    (n0, n1) = class_counts
    q0 = round_half_up(size * float(n0) / (n0 + n1))
    return (q0, size - q0)

def build_replay_set(families, current_train_size, rng):
    if len(families) == 0:
        raise ValueError("no GMM families to replay from")
    if current_train_size < 1:
        raise ValueError("current_train_size {} < 1".format(current_train_size))
    bags = []
    for family in families:
        quotas = class_quotas(current_train_size, family.class_counts)
        for c in (0, 1):
            for j in range(quotas[c]):
                bag_id = "syn-d{}-c{}-{:05d}".format(family.domain_id, c, j)
                bags.append(synthesize_bag(family, c, family.domain_id, rng.child(bag_id), bag_id=bag_id))
    return bags

def assemble_hybrid(current, synthetic, rng):
    combined = list(current) + list(synthetic)
    return [combined[i] for i in rng.permutation(len(combined))]

def assert_synthetic_only(bags, t):
    """real bags from domains before t must never reach training"""
    for b in bags:
        if b.domain_id < t and not b.synthetic:
            raise AccessViolation("real bag '{}' from domain {} in training set of episode {}".format(
                b.bag_id, b.domain_id, t))
