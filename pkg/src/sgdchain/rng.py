"""Counter-based splittable random streams.

Every stream is a Philox generator whose 128-bit key is the stream seed.
A replica seed packs ``(master_seed, index)`` into one integer, so splitting
is pure arithmetic and any replica can be regenerated on its own.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
MAX_MASTER = 1 << 63

NOISE = 0
INIT = 1


def replica_seed(master_seed: int, index: int) -> int:
    """Seed of replica ``index`` under ``master_seed``."""
    if not 0 <= master_seed < MAX_MASTER:
        raise ValueError(f"master_seed must lie in [0, 2**63), got {master_seed}")
    if not 0 <= index <= MASK64:
        raise ValueError(f"replica index out of range: {index}")
    return (master_seed << 64) | index


def replica_seeds(master_seed: int, n: int) -> list[int]:
    return [replica_seed(master_seed, r) for r in range(n)]


def stream(seed: int, channel: int = NOISE) -> np.random.Generator:
    """Generator for ``seed`` on a given channel (noise or initial state).

    The channel occupies the top key bit, which ``replica_seed`` never sets.
    """
    seed = int(seed)
    if not 0 <= seed < (1 << 127):
        raise ValueError(f"seed must lie in [0, 2**127), got {seed}")
    hi = (seed >> 64) | (channel << 63)
    return np.random.Generator(np.random.Philox(key=[seed & MASK64, hi]))


def derive(master_seed: int, tag: str) -> int:
    """Independent 63-bit master seed for a named sub-experiment."""
    ss = np.random.SeedSequence([int(master_seed) & MASK64, zlib.crc32(tag.encode())])
    return int(ss.generate_state(1, np.uint64)[0]) >> 1
