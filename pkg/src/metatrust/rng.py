"""Labelled random substreams.

Each run owns one stream per purpose. A stream is a PCG64 generator (64-bit
output, 128-bit state) seeded through numpy's ``SeedSequence`` with
``entropy=master_seed`` and ``spawn_key=(seed, crc32(label))``. Streams do
not depend on the controller variant, so two variants run with the same
seed see the same corruption draws, the same initial weights and the same
reset states.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("policy-init", "rollout-action", "corruption", "minibatch-shuffle", "env-reset", "eval", "bootstrap")


def substream(master_seed: int, seed: int, label: str) -> np.random.Generator:
    if master_seed < 0 or seed < 0:
        raise ValueError("seeds must be nonnegative")
    key = zlib.crc32(label.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(seed), key))
    return np.random.Generator(np.random.PCG64(ss))


def run_streams(master_seed: int, seed: int) -> dict[str, np.random.Generator]:
    return {label: substream(master_seed, seed, label) for label in STREAMS}
