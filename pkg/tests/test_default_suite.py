"""Paired runs of the main strategies on the default synthetic suite.

Every arm runs once per seed, on the same suite and the same run stream;
the tests below only compare the resulting reports.
"""
import time

import numpy as np
import pytest

from aglrtk.core import RngStream
from aglrtk.gmm import EmConfig
from aglrtk.harness import SequenceSpec, Strategy, run_sequence
from aglrtk.mil import TrainConfig
from aglrtk.replay import ReplayConfig
from aglrtk.synthetic import SyntheticDomainSpec, generate_suite

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)
MAX_RUN_SECONDS = 300.0

ARMS = [ ("naive", lambda: Strategy("naive")),
         ("cumulative", lambda: Strategy("cumulative")),
         ("aglr", lambda: Strategy("aglr")),
         ("aglr_no_abf", lambda: Strategy("aglr", replay_config=ReplayConfig(attention_filtering=False))) ]

def default_sequence(seed):
    spec = SyntheticDomainSpec()
    return SequenceSpec(spec.name, generate_suite(spec, RngStream(seed, "suite")), seed=seed)

@pytest.fixture(scope="module")
def runs():
    """arm -> list over SEEDS of (RunResult, wall seconds)"""
    results = dict((arm, []) for (arm, _) in ARMS)
    for seed in SEEDS:
        seq = default_sequence(seed)
        for (arm, make_strategy) in ARMS:
            start = time.time()
            result = run_sequence(seq, make_strategy(), TrainConfig(), RngStream(seed, "run"), EmConfig())
            results[arm].append((result, time.time() - start))
    return results

def auroc(runs, arm, field):
    return np.array([r.report["auroc"][field] for (r, _) in runs[arm]])

def standard_error(diff):
    return np.std(diff, ddof=1) / np.sqrt(len(diff))

def test_runs_finish_in_time(runs):
    for (arm, per_seed) in runs.items():
        for (seed, (_, seconds)) in zip(SEEDS, per_seed):
            assert seconds < MAX_RUN_SECONDS, "{} seed {} took {:.0f}s".format(arm, seed, seconds)

def test_naive_forgets_first_domain(runs):
    assert np.median(auroc(runs, "naive", "BWT")) <= -0.05
    drops = [r.matrix[2, 0].auroc - r.matrix[0, 0].auroc for (r, _) in runs["naive"]]
    assert np.median(drops) < 0.0

def test_aglr_beats_naive(runs):
    assert np.median(auroc(runs, "aglr", "BWT")) > np.median(auroc(runs, "naive", "BWT"))
    assert np.median(auroc(runs, "aglr", "ACC")) > np.median(auroc(runs, "naive", "ACC"))

def test_accuracy_ordering(runs):
    naive = auroc(runs, "naive", "ACC")
    aglr = auroc(runs, "aglr", "ACC")
    cumulative = auroc(runs, "cumulative", "ACC")
    assert np.median(cumulative) >= np.median(aglr) - standard_error(cumulative - aglr)
    assert np.median(aglr) >= np.median(naive) - standard_error(aglr - naive)
    assert np.median(cumulative) >= np.median(naive)

def test_attention_filtering_not_worse(runs):
    assert np.median(auroc(runs, "aglr", "ACC")) >= np.median(auroc(runs, "aglr_no_abf", "ACC"))
    for (with_abf, without_abf) in zip(runs["aglr"], runs["aglr_no_abf"]):
        assert all(f.attention_filtering for f in with_abf[0].families)
        assert not any(f.attention_filtering for f in without_abf[0].families)
