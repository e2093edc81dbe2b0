"""Seeded random streams.

Every randomized routine takes an integer ``rng_seed`` and derives its own
generator as ``Philox(SeedSequence(seed, spawn_key=(stream, *extra)))``.
Stream ids are fixed per consumer (see ``STREAMS``) so that adding draws in
one stage never shifts the numbers seen by another.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "sampling": 0,
    "gmm": 1,
    "subsample": 2,
    "scene": 3,
    "frb": 4,
    "rff": 5,
    "bench": 6,
}


def make_rng(seed: int, stream: str = "sampling", *extra: int) -> np.random.Generator:
    key = (STREAMS[stream],) + tuple(int(e) for e in extra)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *extra: int) -> int:
    """Derive a 63-bit integer seed, e.g. one per benchmark instance."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(e) for e in extra))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
