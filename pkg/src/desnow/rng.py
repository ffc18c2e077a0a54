"""Deterministic random streams.

Everything random in this package draws from Philox counter-based generators
keyed by ``(seed, purpose)``. Philox output for a given key is identical
across platforms and numpy builds, which is what makes same-seed training
runs byte-identical. Purposes are short strings hashed with crc32 so streams
never collide by accident.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Generator for one named purpose; ``index`` derives per-item substreams
    (e.g. one per dataset sample) from the same purpose."""
    key = (zlib.crc32(purpose.encode("utf-8")), int(index))
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
