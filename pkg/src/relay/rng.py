"""Keyed random streams.

Every random draw in a run comes from a child of one root seed, keyed by
purpose and by whatever identifies the work unit (participant, condition,
trial).  Work units can therefore be simulated in any order, or in
isolation, and still see the same numbers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part) & 0xFFFFFFFF


def seed_sequence(seed: int, purpose: str, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in (purpose, *keys)))


def stream(seed: int, purpose: str, *keys) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, purpose, *keys))


def counter_key(seed: int, purpose: str, *keys) -> int:
    """64-bit key for the counter-based pixel-noise hash."""
    return int(seed_sequence(seed, purpose, *keys).generate_state(1, np.uint64)[0])
