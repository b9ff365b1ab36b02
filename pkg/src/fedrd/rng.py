"""Counter-based random streams for reproducible simulation.

Each (master seed, replication, site) triple owns a disjoint block of the
Philox counter space: the replication and site indices are written into
the two high counter words, and draws advance the low words. Within a
stream, the value for subject ``i`` and draw slot ``s`` is always the
``i * slots + s``-th uniform, so results do not depend on how
replications are scheduled.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "uniform_block"]

_MASK64 = (1 << 64) - 1


def stream(master_seed: int, replication: int, site: int) -> np.random.Generator:
    if replication < 0 or site < 0:
        raise ValueError("replication and site indices must be nonnegative")
    counter = np.array([0, 0, site & _MASK64, replication & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(master_seed) & _MASK64, counter=counter))


def uniform_block(rng: np.random.Generator, n: int, slots: int) -> np.ndarray:
    """``(n, slots)`` uniforms on [0, 1), row ``i`` holding subject ``i``'s draws in slot order."""
    return rng.random((n, slots))
