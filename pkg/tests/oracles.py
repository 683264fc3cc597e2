"""Independent reference implementations used by the tests."""
from __future__ import annotations

import math

import numpy as np

from metatrust.learner import Batch, ParamLayout, PPOConfig, forward_batch, gaussian_logp, ppo_loss


def two_pass_variance(xs) -> float:
    n = len(xs)
    m = math.fsum(xs) / n
    return math.fsum((x - m) ** 2 for x in xs) / n


def return_to_go(rewards) -> np.ndarray:
    return np.array([sum(rewards[i:]) for i in range(len(rewards))])


def brute_cvar(xs, fraction: float) -> float:
    s = sorted(xs)
    k = max(1, min(len(s), math.ceil(fraction * len(s) - 1e-9)))
    return sum(s[:k]) / k


def naive_rank_stability(method_returns: dict, n_resamples: int, rng: np.random.Generator) -> float:
    names = sorted(method_returns)
    ref = sorted(names, key=lambda n: (-np.mean(method_returns[n]), n))
    hits = 0
    for _ in range(n_resamples):
        means = {}
        for n in names:
            d = np.asarray(method_returns[n])
            means[n] = d[rng.integers(0, d.size, d.size)].mean()
        hits += sorted(names, key=lambda n: (-means[n], n)) == ref
    return hits / n_resamples


def random_problem(rng: np.random.Generator, max_params: int = 64, clip_value: bool = False):
    """A tiny network, a random batch around it and a config; at most ``max_params`` parameters."""
    while True:
        n_in = int(rng.integers(1, 4))
        n_act = int(rng.integers(1, 3))
        hidden = tuple(int(h) for h in rng.integers(1, 5, size=int(rng.integers(1, 3))))
        layout = ParamLayout(n_in, hidden, n_act)
        if layout.size <= max_params:
            break
    flat = rng.normal(0, 0.8, layout.size)
    flat[layout.slices["log_std"]] = rng.uniform(-1, 0.5, n_act)
    n = int(rng.integers(4, 24))
    obs = rng.normal(size=(n, n_in))
    mean, value, _ = forward_batch(layout, flat, obs)
    actions = mean + rng.normal(size=mean.shape)
    logp_now = gaussian_logp(actions, mean, layout.log_std(flat))
    batch = Batch(
        obs=obs,
        actions=actions,
        logp_old=logp_now + rng.normal(0, 0.3, n),
        advantages=rng.normal(size=n),
        returns=rng.normal(size=n),
        values_old=value + rng.normal(0, 0.3, n),
        weights=rng.uniform(0.2, 2.0, n),
    )
    cfg = PPOConfig(clip_value=clip_value)
    return layout, flat, batch, cfg


def finite_difference_grad(layout, flat, batch, cfg, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (ppo_loss(layout, up, batch, cfg) - ppo_loss(layout, dn, batch, cfg)) / (2 * h)
    return g


def grad_mismatch(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-6) -> float:
    """Largest violation ratio; <= 1 means every entry is within tolerance."""
    tol = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    return float(np.max(np.abs(analytic - numeric) / tol))
