"""TD-error window, VPES and its moving-average baseline."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from metatrust import kernels
from metatrust.errors import DataQualityError, PreconditionError

DEFAULT_CAPACITY = 64
DEFAULT_SMOOTHING = 0.1


@dataclass
class TdWindow:
    """Bounded FIFO of TD errors, most recent last."""

    capacity: int = DEFAULT_CAPACITY
    values: deque = field(default_factory=deque)

    def __post_init__(self):
        if int(self.capacity) < 1:
            raise PreconditionError(f"window capacity must be positive, got {self.capacity}")
        self.capacity = int(self.capacity)
        self.values = deque(self.values, maxlen=self.capacity)

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.values, dtype=np.float64, count=len(self.values))


def push_td_error(window: TdWindow, delta: float) -> TdWindow:
    delta = float(delta)
    if not math.isfinite(delta):
        raise DataQualityError(f"non-finite TD error {delta!r}; learner state is corrupted")
    window.values.append(delta)
    return window


def fill_window(window: TdWindow, deltas) -> TdWindow:
    """Reset ``window`` and load the most recent ``capacity`` entries of ``deltas``."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if not np.all(np.isfinite(deltas)):
        raise DataQualityError("non-finite TD error in rollout; learner state is corrupted")
    window.values.clear()
    window.values.extend(deltas[-window.capacity:].tolist())
    return window


def compute_vpes(window: TdWindow) -> float:
    """Population variance of the window contents."""
    if len(window) == 0:
        raise PreconditionError("VPES requested on an empty TD window")
    return max(float(kernels.population_variance(window.as_array())), 0.0)


@dataclass(frozen=True)
class VpesState:
    baseline: float = 0.0
    smoothing: float = DEFAULT_SMOOTHING
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 <= self.smoothing <= 1.0:
            raise PreconditionError(f"smoothing must lie in [0, 1], got {self.smoothing}")


def update_baseline(state: VpesState, vpes: float) -> VpesState:
    vpes = float(vpes)
    if not math.isfinite(vpes) or vpes < 0.0:
        raise PreconditionError(f"VPES must be finite and nonnegative, got {vpes!r}")
    b = state.smoothing
    return replace(state, baseline=(1.0 - b) * state.baseline + b * vpes, initialized=True)


def stability_trend(state: VpesState, vpes: float) -> float:
    """Baseline minus current VPES; positive means stability is improving."""
    return state.baseline - float(vpes)
