"""Counter-keyed random streams.

Each stream is identified by (seed, purpose, counter), so a resumed run or a
parallel worker can rebuild exactly the generator it needs without replaying
anything.
"""

import zlib

import numpy as np


def stream(seed: int, purpose: str, counter: int = 0) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(purpose.encode()), int(counter)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
