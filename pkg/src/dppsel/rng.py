"""Seeded random-number streams.

Every stochastic routine in the package takes an explicit ``numpy`` Generator
so that runs are reproducible from a single integer seed. PCG64 is pinned as
the bit generator: identical seeds give identical streams across platforms.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed Generator for the given 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams from one root seed.

    Child c is seeded with SeedSequence(seed).spawn()[c], so the set of
    streams depends only on (seed, c), never on how many workers consume
    them or in which order.
    """
    seq = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(n)]
