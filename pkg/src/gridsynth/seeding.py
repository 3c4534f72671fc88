"""Deterministic RNG construction.

Every stochastic operation derives its generator from integer keys
(seed, sample index, stream tag), so replay is exact for a given key
tuple regardless of call order or worker count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def rng_for(*keys: int) -> np.random.Generator:
    """Build a PCG64 generator keyed on a tuple of integers."""
    entropy = [int(k) & _MASK64 for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
