"""Named, splittable random streams.

Every stream is derived from ``(seed, name)`` alone, so adding a stream never
shifts the draws of another one.
"""
import zlib

import numpy as np


def stream(seed, name):
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))


def make_streams(seed, names):
    return {name: stream(seed, name) for name in names}


def split(rng, n):
    """Split a generator into ``n`` independent children (consumes one draw)."""
    seeds = rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)
    return [np.random.Generator(np.random.PCG64(int(s))) for s in seeds]
