"""Acceptance criteria 1-13, one test each, with a PASS/FAIL line per criterion.

The solver runs are shared through one module-scoped workspace, the same one
``josc-vec verify --suite core`` uses.
"""

import time

import pytest

from josc_vec import acceptance as acc
from josc_vec.harness import worker_count

CHECKS = {
    "1": acc.check_oracle_sandwich,
    "2": acc.check_relaxation_bound,
    "3": acc.check_lemma1,
    "4": acc.check_concavity,
    "5": acc.check_stationarity,
    "6": acc.check_inner_convergence,
    "7": acc.check_outer_convergence,
    "8": acc.check_baseline_ordering,
    "9": acc.check_load_balance,
    "10": acc.check_hungarian,
    "11": acc.check_rounding_graph,
    "12": acc.check_feasibility,
}


@pytest.fixture(scope="module")
def workspace():
    return acc.Workspace(workers=worker_count()), time.perf_counter()


def _report(res):
    print(f"\ncriterion {acc.format_row(res)}")
    assert res.passed, f"criterion {res.key} failed: {res.detail}"


@pytest.mark.parametrize("key", list(CHECKS))
def test_criterion(key, workspace):
    ws, _ = workspace
    res = CHECKS[key](ws)
    assert res.key == key
    _report(res)


def test_criterion_13_performance(workspace):
    ws, start = workspace
    _report(acc.check_performance(ws, start))


def test_lemma1_check_detects_swapped_offsets(workspace):
    _report(acc.check_lemma1_mutation(workspace[0]))


def test_run_suite_rejects_unknown_name():
    with pytest.raises(ValueError):
        acc.run_suite("nightly")
