"""
Seeded random streams

Every random draw in heliodet comes from a numpy Generator (PCG64) whose
SeedSequence entropy is the run seed followed by a stream key, e.g.
derive_rng(seed, "scene", 17). Equal keys give equal streams on every
platform, and each (seed, key) pair is independent of every other, so
parallel workers can generate their share without coordinating.
"""

import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        # Stable across processes (unlike hash())
        return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return int(key)


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Generator for the stream identified by (seed, *keys)"""
    seq = np.random.SeedSequence([_key_to_int(seed)] + [_key_to_int(k) for k in keys])
    return np.random.Generator(np.random.PCG64(seq))
