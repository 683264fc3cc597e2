"""Feed a recorded VPES trace through a controller, no learner involved."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

from metatrust.baselines import ControllerVariant, make_controller_variant
from metatrust.errors import DataQualityError
from metatrust.trust import ControllerConfig, ControllerOutput


def read_trace(path: str | Path) -> list[float]:
    """One nonnegative real per line; blank lines and ``#`` comments are skipped."""
    values = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise DataQualityError(f"{path}:{lineno}: not a number: {text!r}") from None
            if not math.isfinite(v) or v < 0:
                raise DataQualityError(f"{path}:{lineno}: VPES must be finite and nonnegative, got {text}")
            values.append(v)
    return values


def replay_values(
    values: Iterable[float],
    variant: ControllerVariant | str = "full_meta",
    base_lr: float = 1.0,
    config: ControllerConfig | None = None,
) -> list[ControllerOutput]:
    values = list(values)
    controller = make_controller_variant(variant, base_lr, max(len(values), 1), config)
    return [controller.step(v, [], t) for t, v in enumerate(values, 1)]


def replay_trace(
    path: str | Path,
    variant: ControllerVariant | str = "full_meta",
    base_lr: float = 1.0,
    config: ControllerConfig | None = None,
    out: str | Path | None = None,
) -> list[ControllerOutput]:
    outputs = replay_values(read_trace(path), variant, base_lr, config)
    if out is not None:
        with open(out, "w") as f:
            for o in outputs:
                f.write(json.dumps(o.to_dict(), separators=(",", ":")) + "\n")
    return outputs


def trend_crossover(outputs: list[ControllerOutput]) -> int | None:
    """Index of the first output whose trend turns positive after a nonpositive stretch.

    On a burst-then-calm trace this is where the EMA baseline crosses above
    the current VPES, i.e. where the controller starts recovering trust.
    """
    seen_nonpositive = False
    for i, o in enumerate(outputs):
        if o.trend <= 0:
            seen_nonpositive = True
        elif seen_nonpositive:
            return i
    return None
