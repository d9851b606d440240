"""Seeded counter-based random streams; callers own and pass generators explicitly."""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for (seed, stream); distinct streams are independent."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"make_rng: seed must be in [0, 2^64), got {seed}")
    if not 0 <= int(stream) < 2**32:
        raise ValueError(f"make_rng: stream must be in [0, 2^32), got {stream}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))
