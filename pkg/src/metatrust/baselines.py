"""Comparison controllers behind one ``step(vpes, grad_stats, t)`` interface.

Every controller tracks the VPES baseline and trend so logs are comparable
across variants; only the trust-based kinds act on them.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from metatrust.errors import ConfigError
from metatrust.signals import stability_trend, update_baseline
from metatrust.trust import ControllerConfig, ControllerOutput, reset_controller, step_controller

KINDS = ("base", "sched", "elastic", "failsafe_no_recovery", "symmetric", "full_meta")
ALIASES = {"no-meta": "base", "strong-meta": "full_meta"}
TRUST_KINDS = ("failsafe_no_recovery", "symmetric", "full_meta")

SCHED_FLOOR = 0.05
ELASTIC_WINDOW = 10

_DEFAULT_RATES = {
    "full_meta": (0.02, 0.05),
    "symmetric": (0.03, 0.03),
    "failsafe_no_recovery": (0.0, 0.05),
}


def scheduled_lr(t: int, alpha0: float, decay: float, total_iters: int) -> float:
    """Linear decay to a floor of 5% of ``alpha0``; ``decay=1`` reaches the floor at ``total_iters``."""
    frac = 1.0 - decay * t / total_iters
    return alpha0 * max(frac, SCHED_FLOOR)


def elastic_lr(grad_stats: Sequence[float], alpha0: float, kappa: float) -> float:
    """``alpha0 / (1 + kappa * cv)`` with cv the coefficient of variation of the last 10 norms."""
    g = np.asarray(grad_stats, dtype=np.float64)[-ELASTIC_WINDOW:]
    if g.size == 0:
        return alpha0
    mu = float(g.mean())
    cv = float(g.std()) / mu if mu != 0.0 else 0.0
    return alpha0 / (1.0 + kappa * cv)


@dataclass(frozen=True)
class ControllerVariant:
    kind: str = "full_meta"
    decay: float = 1.0
    kappa: float = 1.0
    eta_up: float | None = None
    eta_down: float | None = None

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown controller variant {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind in _DEFAULT_RATES:
            up, down = _DEFAULT_RATES[kind]
            if self.eta_up is None:
                object.__setattr__(self, "eta_up", up)
            if self.eta_down is None:
                object.__setattr__(self, "eta_down", down)
        self.validate()

    def validate(self) -> None:
        if self.kind == "failsafe_no_recovery" and self.eta_up != 0.0:
            raise ConfigError(f"failsafe_no_recovery requires eta_up == 0, got {self.eta_up}")
        if self.kind == "symmetric" and self.eta_up != self.eta_down:
            raise ConfigError(f"symmetric requires eta_up == eta_down, got {self.eta_up}/{self.eta_down}")
        if self.decay < 0 or self.kappa < 0:
            raise ConfigError("decay and kappa must be nonnegative")


class Controller:
    def __init__(self, variant: ControllerVariant, alpha0: float, total_iters: int, config: ControllerConfig):
        self.variant = variant
        self.alpha0 = float(alpha0)
        self.total_iters = max(int(total_iters), 1)
        if variant.kind in TRUST_KINDS:
            config = replace(config, eta_up=variant.eta_up, eta_down=variant.eta_down)
        self.config = config
        self.trust, self.vpes_state = reset_controller(config)

    @property
    def tau(self) -> float | None:
        return self.trust.tau if self.variant.kind in TRUST_KINDS else None

    def step(self, vpes: float, grad_stats: Sequence[float], t: int) -> ControllerOutput:
        kind = self.variant.kind
        if kind in TRUST_KINDS:
            self.trust, self.vpes_state, out = step_controller(self.trust, self.vpes_state, vpes, self.alpha0, t)
            return out
        self.vpes_state = update_baseline(self.vpes_state, vpes)
        trend = stability_trend(self.vpes_state, vpes)
        if kind == "base":
            lr = self.alpha0
        elif kind == "sched":
            # t is 1-based; the first update runs at alpha0
            lr = scheduled_lr(min(max(t - 1, 0), self.total_iters), self.alpha0, self.variant.decay, self.total_iters)
        else:
            lr = elastic_lr(grad_stats, self.alpha0, self.variant.kappa)
        return ControllerOutput(t, float(vpes), self.vpes_state.baseline, trend, None, lr / self.alpha0, lr)


def make_controller_variant(
    variant: ControllerVariant | str,
    alpha0: float,
    total_iters: int = 1,
    config: ControllerConfig | None = None,
) -> Controller:
    if isinstance(variant, str):
        variant = ControllerVariant(variant)
    variant.validate()
    return Controller(variant, alpha0, total_iters, config or ControllerConfig())
