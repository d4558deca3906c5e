"""Reproducible random streams keyed by (seed, replica indices).

Replica streams are derived with a SplitMix64 mixing chain and fed into
numpy's counter-based Philox generator, so results are independent of the
order in which replicas run.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """SplitMix64 finalizer; bijective on 64-bit integers."""
    x &= _MASK
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _MASK
    return x ^ (x >> 31)


def derive_key(seed: int, *indices: int) -> int:
    """Fold replica indices into a 64-bit stream key."""
    key = mix64(seed)
    for i in indices:
        key = mix64(key + _GOLDEN + mix64(i))
    return key


def substream(seed: int, *indices: int) -> np.random.Generator:
    """Independent generator for the replica identified by `indices`."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *indices)))
