"""Seed derivation and generator construction.

Every random draw in the package comes from ``numpy.random.Generator`` backed
by PCG64 (a fixed, platform-independent bit generator). Child seeds for
restarts and bootstrap replicates are derived with :func:`hash64`, a
SplitMix64 fold over the integer parts, so that a replicate's stream depends
only on ``(base_seed, index)`` and never on scheduling.
"""

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def hash64(*parts):
    """Fold integers into a single unsigned 64-bit seed (SplitMix64)."""
    h = 0
    for p in parts:
        h = _splitmix64(h ^ (int(p) & _MASK))
    return h


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK))


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {seed!r}")
    if seed < 0 or seed > _MASK:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed)
