import numpy as np


def child_seed(parent: int, index: int) -> int:
    """Deterministic seed for batch ``index`` derived from ``parent``."""
    ss = np.random.SeedSequence([int(parent) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
