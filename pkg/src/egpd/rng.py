"""Seeded random streams.

Every run draws from PCG64 seeded by ``SeedSequence(seed, spawn_key=(stream,))``,
so sweep workers get independent, reproducible streams from (seed, run index)
regardless of how many processes execute them.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))
