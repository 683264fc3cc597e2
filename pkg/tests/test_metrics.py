import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metatrust.errors import PreconditionError
from metatrust.metrics import (
    SUMMARY_COLUMNS,
    RunRecord,
    bootstrap_rank_stability,
    cvar_at,
    final_return,
    late_failure_rate,
    paired_failure_test,
    run_failed,
    summarize,
    tail_count,
)

from oracles import brute_cvar, naive_rank_stability


def rec(seed, evals, threshold=-100.0, diverged=False, env="pointmass1d", variant="v"):
    return RunRecord(seed, variant, env, threshold, list(evals), diverged=diverged)


def test_tail_count():
    assert tail_count(10, 0.2) == 2
    assert tail_count(10, 0.3) == 3
    assert tail_count(3, 0.1) == 1
    assert tail_count(5, 1.0) == 5
    with pytest.raises(PreconditionError):
        tail_count(5, 0.0)


def test_cvar_examples():
    assert cvar_at([5, 1, 4, 2, 3], 0.2) == 1.0
    assert cvar_at([5, 1, 4, 2, 3, 0, 9, 9, 9, 9], 0.2) == 0.5
    assert cvar_at([7.0], 0.2) == 7.0
    with pytest.raises(PreconditionError):
        cvar_at([], 0.2)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0.01, 1.0))
def test_cvar_matches_brute_force(xs, f):
    assert cvar_at(xs, f) == pytest.approx(brute_cvar(xs, f), rel=1e-12, abs=1e-9)
    assert cvar_at(xs, f) <= np.mean(xs) + 1e-6


def test_final_return_tail_mean():
    r = rec(0, range(20))
    assert final_return(r, 0.1) == 18.5


def test_diverged_imputed_at_threshold():
    r = rec(0, [5.0], threshold=-35.0, diverged=True)
    assert final_return(r) == -35.0 and run_failed(r)


def test_run_failed_requires_whole_window():
    assert run_failed(rec(0, [0.0] * 8 + [-200, -200], -100), 0.2)
    assert not run_failed(rec(0, [0.0] * 8 + [-200, -50], -100), 0.2)
    with pytest.raises(PreconditionError):
        run_failed(rec(0, []))


def test_late_failure_one_in_five():
    records = [rec(s, [-10.0] * 10) for s in range(4)] + [rec(4, [-500.0] * 10)]
    assert late_failure_rate(records) == 0.2


def test_late_failure_rejects_mixed_envs():
    with pytest.raises(PreconditionError):
        late_failure_rate([rec(0, [0.0]), rec(1, [0.0], env="pendulum")])
    with pytest.raises(PreconditionError):
        late_failure_rate([])


def test_summary_row():
    records = [rec(s, [float(s)]) for s in range(5)]
    s = summarize("full_meta", records)
    assert s.mean_final_return == 2.0
    assert s.std_final_return == pytest.approx(math.sqrt(2.0))  # ddof 0
    assert s.cvar20 == 0.0 and s.late_failure_rate == 0.0 and s.n_seeds == 5
    assert len(s.row()) == len(SUMMARY_COLUMNS)
    assert SUMMARY_COLUMNS[1:5] == ("Final Return", "Std", "CVaR@20%", "Late-Failure")


def test_bootstrap_identical_sets():
    assert bootstrap_rank_stability({"a": [1, 2, 3], "b": [3, 2, 1]}, 100, np.random.default_rng(0)) == 1.0


def test_bootstrap_well_separated():
    data = {"a": [100.0, 101, 102, 99], "b": [0.0, 1, 2, -1]}
    assert bootstrap_rank_stability(data, 500, np.random.default_rng(0)) == 1.0


def test_bootstrap_matches_naive_oracle():
    rng = np.random.default_rng(1)
    data = {"a": rng.normal(0, 1, 8).tolist(), "b": rng.normal(0.3, 1, 8).tolist(), "c": rng.normal(0.1, 1, 8).tolist()}
    fast = bootstrap_rank_stability(data, 4000, np.random.default_rng(2))
    slow = naive_rank_stability(data, 4000, np.random.default_rng(3))
    assert abs(fast - slow) < 0.02


def test_bootstrap_preconditions():
    with pytest.raises(PreconditionError):
        bootstrap_rank_stability({"a": [1, 2]}, 10, np.random.default_rng(0))
    with pytest.raises(PreconditionError):
        bootstrap_rank_stability({"a": [1], "b": [2, 3]}, 10, np.random.default_rng(0))


def test_paired_failure_test():
    out = paired_failure_test([True] * 6 + [False] * 4, [False] * 10)
    assert out["a_only"] == 6 and out["b_only"] == 0
    assert out["p_value"] == pytest.approx(0.5**6)
    assert paired_failure_test([True, False], [True, False])["p_value"] == 1.0
    with pytest.raises(PreconditionError):
        paired_failure_test([True], [True, False])
