"""Deterministic random streams keyed by (seed, purpose, index...).

Every source of randomness in the package is drawn from a stream derived
from a 64-bit seed plus a path of labels and indices.  Streams for
different paths are independent, so results do not depend on scheduling
or batch order.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

ENV_SEED = "CCATLAB_SEED"


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError(f"stream path indices must be non-negative, got {part}")
    return part


def stream(seed: int, *path) -> np.random.Generator:
    """Generator for (seed, *path); identical arguments give identical streams."""
    key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def derive_seed(seed: int, *path) -> int:
    """Stable 63-bit sub-seed for components that take their own seed."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key_part(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def default_seed(explicit: int | None = None) -> int:
    """Resolve a seed: explicit value, else CCATLAB_SEED, else 0."""
    if explicit is not None:
        return int(explicit)
    env = os.environ.get(ENV_SEED)
    return int(env) if env else 0
