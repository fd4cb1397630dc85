"""Named random substreams.

Every unit of Monte Carlo work draws from a generator keyed by the run seed
and a path of names, e.g. ``("partial", 2, "timeline", 17, "block", 0)``.
The stream a unit sees is therefore independent of scheduling order and of
the number of worker threads.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        if name < 0:
            raise ValueError("substream indices must be >= 0")
        return int(name)
    return zlib.crc32(str(name).encode()) | (1 << 32)  # keeps strings apart from small ints


def substream(seed: int, *names) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be >= 0")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))
