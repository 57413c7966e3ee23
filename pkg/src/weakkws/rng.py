"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by a SeedSequence over a tuple of
non-negative integers, so ``stream(seed, i)`` is reproducible across
platforms and independent of the order in which streams are created.
"""

import numpy as np


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into one 64-bit seed."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))
