"""Seeded randomness.

Every random draw in the package comes from numpy's PCG64 bit generator
seeded with one explicit unsigned 64-bit integer. The PCG64 bit stream for
a given seed is platform independent, so generated fixtures are portable.
"""

import numpy as np

MAX_SEED = 2**64 - 1


def make_rng(seed: int) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))
