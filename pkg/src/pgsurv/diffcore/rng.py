"""Deterministic random streams.

All randomness derives from one integer seed. A stream is addressed by a
path of keys (ints or strings) and backed by a counter-based Philox
generator, so ``stream(seed, "init")`` and ``stream(seed, "dropout", 3)``
are independent and reproducible regardless of call order.
"""
import zlib

import numpy as np


def _key(k):
    if isinstance(k, (int, np.integer)):
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed, *keys):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
