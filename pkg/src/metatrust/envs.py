"""Built-in continuous-control environments and reward corruption.

Three environments, all with actions clamped to [-1, 1] (pendulum: [-2, 2]):

``pointmass1d``
    State ``[x, v]``. ``v' = clip(v + 0.1 a, -1, 1)``, ``x' = x + 0.1 v'``
    with walls at |x| = 2 that stop the mass. Reward ``-|x| - 0.01 a^2``.
    Reset: ``x ~ U(-1, 1)``, ``v = 0``. Horizon 50. Failure threshold -100,
    i.e. pinned near a wall for the whole episode.

``pendulum``
    State ``[theta, omega]`` with theta = 0 upright. Swing-up dynamics with
    g = 10, m = 1, l = 1, dt = 0.05, |omega| <= 8. Reward
    ``-(theta^2 + 0.1 omega^2 + 0.001 u^2)``. Reset: ``theta ~ U(-pi, pi)``,
    ``omega ~ U(-1, 1)``. Horizon 100. Failure threshold -1000.

``collapse_valley``
    State ``[x]``, ``x' = max(x + 0.03 a, -3)``. Reward
    ``3 exp(-((x - 0.8) / 0.05)^2) - 0.1 |x - 0.8| - 0.01 a^2``; any position
    above 0.9 is the cliff: reward -50 and the episode ends. Reset at 0.
    Horizon 200. Holding still near the start earns about -16 and riding the
    ridge about +500; running over the edge ends the episode near -40 to
    -65, so the failure threshold sits at -35.

Rewards are evaluated on the pre-step state.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from metatrust import kernels
from metatrust.errors import ConfigError, DataQualityError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    horizon: int
    failure_threshold: float
    obs_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ConfigError(f"{self.name}: action bounds must have {self.action_dim} entries")
        for lo, hi in zip(self.action_low, self.action_high):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigError(f"{self.name}: invalid action bounds [{lo}, {hi}]")
        if self.horizon < 1:
            raise ConfigError(f"{self.name}: horizon must be positive")

    def observe(self, state: np.ndarray) -> np.ndarray:
        if self.obs_scale is None:
            return state
        return state * np.asarray(self.obs_scale)

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        return np.clip(action, self.action_low, self.action_high)

    def echo(self) -> dict:
        return asdict(self)


ENV_SPECS: dict[str, EnvSpec] = {
    "pointmass1d": EnvSpec("pointmass1d", 2, 1, (-1.0,), (1.0,), 50, -100.0),
    "pendulum": EnvSpec("pendulum", 2, 1, (-2.0,), (2.0,), 100, -1000.0, (1.0 / math.pi, 1.0 / 8.0)),
    "collapse_valley": EnvSpec("collapse_valley", 1, 1, (-1.0,), (1.0,), 200, -35.0),
}


def get_spec(name: str, failure_threshold: float | None = None) -> EnvSpec:
    try:
        spec = ENV_SPECS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENV_SPECS)}") from None
    if failure_threshold is not None:
        spec = EnvSpec(**{**asdict(spec), "failure_threshold": float(failure_threshold)})
    return spec


def env_reset(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.name == "pointmass1d":
        return np.array([rng.uniform(-1.0, 1.0), 0.0])
    if spec.name == "pendulum":
        th = rng.uniform(-math.pi, math.pi)
        return np.array([th, rng.uniform(-1.0, 1.0)])
    if spec.name == "collapse_valley":
        return np.zeros(1)
    raise ConfigError(f"no reset rule for {spec.name!r}")


def env_step(spec: EnvSpec, state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """One transition. ``done`` here is termination only; the horizon is tracked by :class:`Env`."""
    a = spec.clip_action(np.asarray(action, dtype=np.float64))
    if spec.name == "pointmass1d":
        x, v, r = kernels.pointmass_step(float(state[0]), float(state[1]), float(a[0]))
        nxt, done = np.array([x, v]), False
    elif spec.name == "pendulum":
        th, w, r = kernels.pendulum_step(float(state[0]), float(state[1]), float(a[0]))
        nxt, done = np.array([th, w]), False
    elif spec.name == "collapse_valley":
        x, r, done = kernels.valley_step(float(state[0]), float(a[0]))
        nxt = np.array([x])
    else:
        raise ConfigError(f"no dynamics for {spec.name!r}")
    if not (np.all(np.isfinite(nxt)) and math.isfinite(r)):
        raise DataQualityError(f"{spec.name}: non-finite state after step from {state!r}")
    return nxt, float(r), bool(done)


class Env:
    """Stateful wrapper adding the step counter and horizon truncation."""

    def __init__(self, spec: EnvSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.state = env_reset(spec, rng)
        self.t = 0

    def reset(self) -> np.ndarray:
        self.state = env_reset(self.spec, self.rng)
        self.t = 0
        return self.state

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        self.state, r, done = env_step(self.spec, self.state, action)
        self.t += 1
        return self.state, r, done or self.t >= self.spec.horizon


# ---------------------------------------------------------------- corruption

CORRUPTION_MODES = ("none", "stationary", "linear")


@dataclass(frozen=True)
class CorruptionScheme:
    mode: str = "stationary"
    p_start: float = 0.5
    p_end: float = 0.5
    xi: float = 10.0
    total_steps: int = 120_000

    def __post_init__(self):
        if self.mode not in CORRUPTION_MODES:
            raise ConfigError(f"corruption mode must be one of {CORRUPTION_MODES}, got {self.mode!r}")
        for name in ("p_start", "p_end"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"corruption {name} must lie in [0, 1], got {p}")
        if self.mode == "stationary" and self.p_start != self.p_end:
            raise ConfigError("stationary corruption requires p_start == p_end")
        if self.xi < 0:
            raise ConfigError(f"corruption xi must be nonnegative, got {self.xi}")
        if self.total_steps < 1:
            raise ConfigError("corruption total_steps must be positive")

    @classmethod
    def stationary(cls, p: float, xi: float, total_steps: int = 120_000) -> "CorruptionScheme":
        return cls("stationary", p, p, xi, total_steps)

    @classmethod
    def linear(cls, p_start: float, p_end: float, xi: float, total_steps: int) -> "CorruptionScheme":
        return cls("linear", p_start, p_end, xi, total_steps)

    @classmethod
    def off(cls) -> "CorruptionScheme":
        return cls("none", 0.0, 0.0, 0.0, 1)

    def echo(self) -> dict:
        return asdict(self)


def corruption_probability(scheme: CorruptionScheme, t: int) -> float:
    if scheme.mode == "none":
        return 0.0
    if scheme.mode == "stationary":
        return scheme.p_start
    frac = min(t / scheme.total_steps, 1.0)
    return scheme.p_start + (scheme.p_end - scheme.p_start) * frac


def corrupt_reward(r: float, scheme: CorruptionScheme, t: int, rng: np.random.Generator) -> float:
    """Add U(-xi, xi) noise with probability p(t).

    Consumes one uniform for the Bernoulli decision, then one more only when
    the step is corrupted. ``mode="none"`` consumes nothing.
    """
    if scheme.mode == "none":
        return r
    if rng.random() < corruption_probability(scheme, t):
        return r + rng.uniform(-scheme.xi, scheme.xi)
    return r


def corruption_offsets(scheme: CorruptionScheme, t0: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Offsets for steps ``t0 .. t0+n-1``; identical draws to calling :func:`corrupt_reward` per step."""
    out = np.zeros(n)
    if scheme.mode == "none":
        return out
    for i in range(n):
        out[i] = corrupt_reward(0.0, scheme, t0 + i, rng)
    return out
