"""Counter-based random streams.

Every stochastic routine in the package draws from a Philox generator
keyed by (seed, *stream keys). Streams are independent and reproducible
regardless of evaluation order or parallelism degree, which is what makes
backtests and bootstrap loops byte-identical across runs and worker counts.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 63) - 1


def _key_word(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & _MASK


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return a Philox generator for the given seed and stream keys.

    String keys are hashed with crc32 so named streams ("bootstrap",
    "simulate", ...) stay stable across releases and platforms.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK,
        spawn_key=tuple(_key_word(k) for k in keys),
    )
    return np.random.Generator(np.random.Philox(ss))
