"""Binary classification metrics and continual-learning summaries of the
T x T train-test matrix.

Cell (i, j) of the matrix is the performance on test set j after training
session i (0-based here, 1-based in files).
"""
from collections import namedtuple

import numpy as np
from scipy.stats import rankdata

METRICS = ("weighted_f1", "auroc", "auprc")

class LengthMismatch(ValueError):
    pass
class UndefinedMetric(ValueError):
    pass
class IncompleteMatrix(ValueError):
    pass

# auroc / auprc are None when the test set lacks a class
MetricTriple = namedtuple("MetricTriple", METRICS)

def _check_lengths(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch("got {} labels and {} predictions".format(a.shape[0], b.shape[0]))
    if a.shape[0] == 0:
        raise LengthMismatch("need at least one label")
    return (a, b)

def weighted_f1(labels, predictions):
    (labels, predictions) = _check_lengths(labels, predictions)
    N = float(labels.shape[0])
    total = 0.0
    for c in (0, 1):
        tp = np.sum((predictions == c) & (labels == c))
        fp = np.sum((predictions == c) & (labels != c))
        fn = np.sum((predictions != c) & (labels == c))
        precision = tp / float(tp + fp) if tp + fp > 0 else 0.0
        recall = tp / float(tp + fn) if tp + fn > 0 else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        total += np.sum(labels == c) / N * f1
    return float(total)

def auroc(labels, scores):
    """Mann-Whitney form: P(random positive outranks random negative), ties count 1/2"""
    (labels, scores) = _check_lengths(labels, scores)
    pos = labels == 1
    P = int(np.sum(pos))
    N = labels.shape[0] - P
    if P == 0 or N == 0:
        raise UndefinedMetric("AUROC needs both classes, got {} positives and {} negatives".format(P, N))
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    U = np.sum(ranks[pos]) - P * (P + 1) / 2.0
    return float(U / (P * N))

def auprc(labels, scores):
    """sum_k (R_k - R_{k-1}) P_k over distinct descending score thresholds"""
    (labels, scores) = _check_lengths(labels, scores)
    y = (labels == 1).astype(np.float64)
    P = np.sum(y)
    if P == 0:
        raise UndefinedMetric("AUPRC needs at least one positive")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="mergesort")
    s_sorted = scores[order]
    # last position of each block of tied scores
    idx = np.r_[np.where(np.diff(s_sorted) != 0)[0], len(s_sorted) - 1]
    tps = np.cumsum(y[order])[idx]
    fps = (idx + 1) - tps
    precision = tps / (tps + fps)
    recall = tps / P
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))

def evaluate_scores(labels, scores, threshold=0.5):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    f1 = weighted_f1(labels, (scores >= threshold).astype(int))
    try:
        roc = auroc(labels, scores)
    except UndefinedMetric:
        roc = None
    try:
        prc = auprc(labels, scores)
    except UndefinedMetric:
        prc = None
    return MetricTriple(f1, roc, prc)

class TrainTestMatrix(object):
    def __init__(self, T):
        if T < 1:
            raise ValueError("matrix needs T >= 1, got {}".format(T))
        self.T = int(T)
        self.cells = [[None] * self.T for _ in range(self.T)]

    def set(self, i, j, triple):
        self.cells[i][j] = MetricTriple(*triple)

    def __getitem__(self, key):
        (i, j) = key
        return self.cells[i][j]

    def is_complete(self):
        return all(c is not None for row in self.cells for c in row)

    def values(self, metric):
        """T x T float array of one metric, nan where undefined"""
        V = np.full((self.T, self.T), np.nan)
        for i in range(self.T):
            for j in range(self.T):
                c = self.cells[i][j]
                if c is not None and getattr(c, metric) is not None:
                    V[i, j] = getattr(c, metric)
        return V

    def copy_row(self, src, dst):
        self.cells[dst] = list(self.cells[src])

    def scaled(self, alpha):
        m = TrainTestMatrix(self.T)
        for i in range(self.T):
            for j in range(self.T):
                c = self.cells[i][j]
                if c is not None:
                    m.set(i, j, [None if v is None else alpha * v for v in c])
        return m

class ClReport(object):
    """ACC, ILM and BWT per metric.  values[metric] is a dict with keys
    ACC, ILM, BWT, excluded_cells, bwt_defined; ILM and BWT are None when
    not applicable (joint training)."""
    def __init__(self, values, ilm_variant="seen"):
        self.values = values
        self.ilm_variant = ilm_variant

    def __getitem__(self, metric):
        return self.values[metric]

    def mark_not_applicable(self):
        for metric in self.values:
            self.values[metric]["ILM"] = None
            self.values[metric]["BWT"] = None
            self.values[metric]["bwt_defined"] = False

def _mean_defined(vals):
    vals = np.asarray(vals, dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return np.nan
    return float(np.mean(vals))

def cl_report(matrix, ilm_variant="seen"):
    """ACC = mean of the last row, BWT = mean over j < T of (m[T,j] - m[j,j]),
    ILM = mean of the lower triangle ('seen') or mean of row means ('all').
    Undefined cells are skipped and counted in excluded_cells."""
    if not matrix.is_complete():
        raise IncompleteMatrix("train-test matrix has unfilled cells")
    if ilm_variant not in ("seen", "all"):
        raise ValueError("ilm variant '{}' not 'seen' or 'all'".format(ilm_variant))
    T = matrix.T
    values = {}
    for metric in METRICS:
        V = matrix.values(metric)
        acc = _mean_defined(V[T-1, :])
        if T > 1:
            bwt = _mean_defined([V[T-1, j] - V[j, j] for j in range(T-1)])
            bwt_defined = bool(np.isfinite(bwt))
            if not bwt_defined:
                bwt = 0.0
        else:
            (bwt, bwt_defined) = (0.0, False)
        if ilm_variant == "seen":
            ilm = _mean_defined(V[np.tril_indices(T)])
        else:
            ilm = _mean_defined([_mean_defined(V[i, :]) for i in range(T)])
        values[metric] = { "ACC" : acc, "ILM" : ilm, "BWT" : bwt,
                           "excluded_cells" : int(np.sum(~np.isfinite(V))), "bwt_defined" : bwt_defined }
    return ClReport(values, ilm_variant)
