"""Deterministic RNG derivation.

Every random draw in the package flows from a user-visible seed through
`derive_rng`, so independent work items (splits, tasks, optimizer batches)
get decorrelated streams and any run is reproducible bit for bit.
"""

import zlib

import numpy as np


def stream_key(*parts: int | str) -> tuple[int, ...]:
    """Map a mixed tuple of ints and strings to a SeedSequence spawn key."""
    key = []
    for part in parts:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)):
            key.append(int(part) & 0xFFFFFFFF)
        else:
            raise TypeError(f"unsupported stream key part: {part!r}")
    return tuple(key)


def derive_rng(seed: int, *parts: int | str) -> np.random.Generator:
    """Generator for the stream identified by (seed, *parts)."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(*parts))
    return np.random.default_rng(ss)
