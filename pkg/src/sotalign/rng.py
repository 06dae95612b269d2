"""Seeding helpers.

All randomness in the package flows from a single 64-bit seed through
Philox, a counter-based generator whose streams can be split by an
integer path. Sub-components derive their own independent streams from
(seed, *stream), so any piece of the pipeline is reproducible in
isolation.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a Philox generator for the sub-stream `stream` of `seed`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=stream)))


def derive_seed(seed: int, *stream: int) -> int:
    """Collapse (seed, *stream) into a fresh 64-bit integer seed."""
    return int(np.random.SeedSequence(seed, spawn_key=stream).generate_state(1, np.uint64)[0])
