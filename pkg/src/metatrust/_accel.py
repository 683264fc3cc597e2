"""Numba switch.

Set ``METATRUST_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels. Numba is optional; without it the fallback is used automatically.
"""
from __future__ import annotations

import os

_FLAG = "METATRUST_DISABLE_NUMBA"

_disabled = os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is installed in CI
    _numba = None

NUMBA_AVAILABLE = _numba is not None
NUMBA_ENABLED = NUMBA_AVAILABLE and not _disabled


def jit(fn):
    """Compile ``fn`` in nopython mode, or return it unchanged if numba is missing."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True, nogil=True)(fn)


def select(jitted, fallback):
    return jitted if NUMBA_ENABLED else fallback
