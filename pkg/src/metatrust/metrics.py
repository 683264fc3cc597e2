"""Robustness metrics over per-seed run records."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from metatrust.errors import PreconditionError

SUMMARY_COLUMNS = ("variant", "Final Return", "Std", "CVaR@20%", "Late-Failure", "n_seeds")


@dataclass
class RunRecord:
    seed: int
    variant: str
    env: str
    failure_threshold: float
    eval_returns: list[float] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    diverged: bool = False


@dataclass(frozen=True)
class MetricSummary:
    variant: str
    mean_final_return: float
    std_final_return: float
    cvar20: float
    late_failure_rate: float
    n_seeds: int

    def row(self) -> list:
        return [
            self.variant,
            f"{self.mean_final_return:.6f}",
            f"{self.std_final_return:.6f}",
            f"{self.cvar20:.6f}",
            f"{self.late_failure_rate:.6f}",
            self.n_seeds,
        ]


def tail_count(n: int, fraction: float) -> int:
    """``ceil(fraction * n)`` clamped to [1, n], tolerant of float noise like 0.3 * 10."""
    if not 0.0 < fraction <= 1.0:
        raise PreconditionError(f"fraction must lie in (0, 1], got {fraction}")
    return min(max(math.ceil(fraction * n - 1e-9), 1), n)


def final_return(record: RunRecord, tail_fraction: float = 0.1) -> float:
    if record.diverged:
        return float(record.failure_threshold)
    if not record.eval_returns:
        raise PreconditionError(f"seed {record.seed}: no evaluation checkpoints")
    k = tail_count(len(record.eval_returns), tail_fraction)
    return float(np.mean(record.eval_returns[-k:]))


def cvar_at(returns: Sequence[float], fraction: float = 0.2) -> float:
    x = np.sort(np.asarray(returns, dtype=np.float64))
    if x.size == 0:
        raise PreconditionError("CVaR of an empty sample")
    return float(x[: tail_count(x.size, fraction)].mean())


def run_failed(record: RunRecord, window_fraction: float = 0.1) -> bool:
    if record.diverged:
        return True
    if not record.eval_returns:
        raise PreconditionError(f"seed {record.seed}: no evaluation checkpoints")
    k = tail_count(len(record.eval_returns), window_fraction)
    return all(r < record.failure_threshold for r in record.eval_returns[-k:])


def late_failure_rate(records: Sequence[RunRecord], window_fraction: float = 0.1) -> float:
    if not records:
        raise PreconditionError("no run records")
    envs = {r.env for r in records}
    if len(envs) > 1:
        raise PreconditionError(f"records mix environments: {sorted(envs)}")
    return sum(run_failed(r, window_fraction) for r in records) / len(records)


def summarize(variant: str, records: Sequence[RunRecord], tail_fraction: float = 0.1) -> MetricSummary:
    finals = np.array([final_return(r, tail_fraction) for r in records])
    return MetricSummary(
        variant=variant,
        mean_final_return=float(finals.mean()),
        std_final_return=float(finals.std()),
        cvar20=cvar_at(finals, 0.2),
        late_failure_rate=late_failure_rate(records, tail_fraction),
        n_seeds=len(records),
    )


def bootstrap_rank_stability(
    method_returns: Mapping[str, Sequence[float]],
    n_resamples: int,
    rng: np.random.Generator,
) -> float:
    """Share of within-variant bootstrap resamples that keep the original mean-return ordering.

    Ties in mean return break by variant name. When every variant has the
    same return multiset the ordering is fixed by name alone and the result
    is 1.0 by convention.
    """
    names = sorted(method_returns)
    data = [np.asarray(method_returns[n], dtype=np.float64) for n in names]
    if len(names) < 2 or any(d.size < 2 for d in data):
        raise PreconditionError("need at least two variants with at least two seeds each")
    if all(np.array_equal(np.sort(d), np.sort(data[0])) for d in data[1:]):
        return 1.0
    means = np.empty((n_resamples, len(names)))
    for j, d in enumerate(data):
        idx = rng.integers(0, d.size, size=(n_resamples, d.size))
        means[:, j] = d[idx].mean(axis=1)
    ref = np.array([d.mean() for d in data])
    # primary key -mean, secondary the column index (names are sorted)
    order_ref = np.lexsort((np.arange(len(names)), -ref))
    name_key = np.broadcast_to(np.arange(len(names)), means.shape)
    orders = np.lexsort((name_key, -means), axis=1)
    return float(np.mean(np.all(orders == order_ref, axis=1)))


def paired_failure_test(fail_a: Sequence[bool], fail_b: Sequence[bool]) -> dict:
    """One-sided exact sign test on discordant seed pairs.

    Tests whether variant A fails more often than B: ``a_only`` counts seeds
    where only A failed, ``b_only`` where only B failed, and the p-value is
    ``P[Binomial(a_only + b_only, 1/2) >= a_only]``.
    """
    if len(fail_a) != len(fail_b):
        raise PreconditionError("paired test needs equal-length failure vectors")
    a_only = sum(bool(a) and not bool(b) for a, b in zip(fail_a, fail_b))
    b_only = sum(bool(b) and not bool(a) for a, b in zip(fail_a, fail_b))
    n = a_only + b_only
    p = 1.0 if n == 0 else float(stats.binomtest(a_only, n, 0.5, alternative="greater").pvalue)
    return {"a_only": a_only, "b_only": b_only, "p_value": p}
