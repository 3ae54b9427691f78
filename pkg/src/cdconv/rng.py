"""Deterministic RNG stream derivation.

Every random draw in the package comes from a generator keyed by a tuple of
non-negative integers, e.g. ``(seed, step)`` for one CD update or
``(seed, replicate)`` for one Monte Carlo replicate.  Two calls with the same
key produce bit-identical streams regardless of execution order.
"""

from __future__ import annotations

import numpy as np

# Namespaces keep streams for different purposes disjoint under the same seed.
DATA = 1
CD_STEP = 2
REPLICATE = 3
ALPHA_CHAIN = 4
GRADIENT_FIELD = 5
DIAGNOSE = 6


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a fresh generator derived from ``seed`` and ``keys``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(k < 0 for k in entropy):
        raise ValueError(f"stream keys must be non-negative, got {entropy}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
