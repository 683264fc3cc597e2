"""Meta-trust state machine.

Trust moves up by ``eta_up`` when the stability trend is strictly positive
and down by ``eta_down`` otherwise, clamped to [0, 1]. The learning-rate
scale is ``c_max * tau``; while ``tau < tau_min`` the scale is capped at 1
so low-trust updates can shrink but never grow.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, replace

from metatrust.errors import ConfigError
from metatrust.signals import (
    DEFAULT_CAPACITY,
    DEFAULT_SMOOTHING,
    TdWindow,
    VpesState,
    stability_trend,
    update_baseline,
)


@dataclass(frozen=True)
class TrustState:
    tau: float = 0.5
    eta_up: float = 0.02
    eta_down: float = 0.05
    tau_min: float = 0.6
    c_max: float = 2.0


@dataclass(frozen=True)
class ControllerConfig:
    tau0: float = 0.5
    eta_up: float = 0.02
    eta_down: float = 0.05
    tau_min: float = 0.6
    c_max: float = 2.0
    smoothing: float = DEFAULT_SMOOTHING
    window: int = DEFAULT_CAPACITY

    def validate(self, *, warn_asymmetry: bool = False) -> "ControllerConfig":
        if not 0.0 < self.tau0 < 1.0:
            raise ConfigError(f"tau0 must lie in the open interval (0, 1), got {self.tau0}")
        if self.eta_up < 0 or self.eta_down < 0:
            raise ConfigError(f"trust rates must be nonnegative, got up={self.eta_up} down={self.eta_down}")
        if not 0.0 <= self.tau_min <= 1.0:
            raise ConfigError(f"tau_min must lie in [0, 1], got {self.tau_min}")
        if self.c_max <= 0:
            raise ConfigError(f"c_max must be positive, got {self.c_max}")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ConfigError(f"smoothing must lie in [0, 1], got {self.smoothing}")
        if self.window < 1:
            raise ConfigError(f"window must be a positive integer, got {self.window}")
        if not self.failsafe_binding:
            warnings.warn(
                f"c_max*tau_min={self.c_max * self.tau_min:g} <= 1: the fail-safe cap can never bind",
                stacklevel=2,
            )
        if warn_asymmetry and self.eta_up > self.eta_down:
            warnings.warn(
                f"eta_up={self.eta_up} exceeds eta_down={self.eta_down}: trust recovers faster than it decays",
                stacklevel=2,
            )
        return self

    @property
    def failsafe_binding(self) -> bool:
        """True when some tau below tau_min would otherwise get a scale above 1."""
        return self.c_max * self.tau_min > 1.0


@dataclass(frozen=True)
class ControllerOutput:
    iteration: int
    vpes: float
    baseline: float
    trend: float
    tau: float | None
    scale: float
    effective_lr: float

    FIELDS = ("iteration", "vpes", "baseline", "trend", "tau", "scale", "effective_lr")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerOutput":
        return cls(**{k: d[k] for k in cls.FIELDS})


# repeated float steps like 10 x 0.1 land just short of a bound; snap within this
_SNAP = 1e-12


def update_trust(state: TrustState, trend: float) -> TrustState:
    if trend > 0:
        tau = state.tau + state.eta_up
        tau = 1.0 if tau >= 1.0 - _SNAP else tau
    else:
        tau = state.tau - state.eta_down
        tau = 0.0 if tau <= _SNAP else tau
    return replace(state, tau=tau)


def raw_scale(state: TrustState) -> float:
    return state.c_max * state.tau


def learning_scale(state: TrustState) -> float:
    c = raw_scale(state)
    if state.tau < state.tau_min:
        c = min(c, 1.0)
    return c


def step_controller(
    trust: TrustState,
    vpes_state: VpesState,
    vpes: float,
    base_lr: float,
    iteration: int,
) -> tuple[TrustState, VpesState, ControllerOutput]:
    vpes_state = update_baseline(vpes_state, vpes)
    trend = stability_trend(vpes_state, vpes)
    trust = update_trust(trust, trend)
    scale = learning_scale(trust)
    out = ControllerOutput(
        iteration=int(iteration),
        vpes=float(vpes),
        baseline=vpes_state.baseline,
        trend=trend,
        tau=trust.tau,
        scale=scale,
        effective_lr=base_lr * scale,
    )
    return trust, vpes_state, out


def reset_controller(config: ControllerConfig | None = None) -> tuple[TrustState, VpesState]:
    cfg = (config or ControllerConfig()).validate()
    trust = TrustState(
        tau=cfg.tau0, eta_up=cfg.eta_up, eta_down=cfg.eta_down, tau_min=cfg.tau_min, c_max=cfg.c_max
    )
    return trust, VpesState(baseline=0.0, smoothing=cfg.smoothing)


def new_window(config: ControllerConfig | None = None) -> TdWindow:
    return TdWindow(capacity=(config or ControllerConfig()).window)


def config_echo(config: ControllerConfig) -> dict:
    return asdict(config)
