"""Counter-based random streams keyed by ``(master_seed, index)``.

Every Monte Carlo path owns a Philox stream derived only from the master seed
and the path index, so serial and parallel runs draw identical ensembles.
"""

import numpy as np


def path_seed(master_seed: int, index: int) -> int:
    """64-bit seed of path ``index`` under ``master_seed``."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))
