"""Named random streams derived from one 64-bit seed.

Each component (data, init, sampler, ...) gets its own generator, so
changing how much randomness one of them consumes never shifts another.
"""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(key,))))
