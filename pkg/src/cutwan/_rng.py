"""Seeded Philox streams keyed by purpose, so that adding a consumer never shifts another."""
import zlib

import numpy as np


def stream(seed: int, *keys) -> np.random.Generator:
    spawn_key = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
