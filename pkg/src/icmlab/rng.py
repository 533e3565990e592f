"""Deterministic counter-based randomness built on the splitmix64 finalizer.

Every stochastic piece of the pipeline (scene geometry, parameter init,
quantizer noise) draws from here, so a seed plus a handful of integer tags
fully determines results, bit for bit, on any platform. Streams are
counter-based: element i of a stream never depends on how many elements
were drawn before it, which keeps parallel evaluation order-independent.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_PHI = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _finalize(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def mix(*keys: int) -> int:
    """Fold integer keys into a single 64-bit stream seed (order-sensitive)."""
    h = 0x243F6A8885A308D3
    for k in keys:
        h = _finalize(h + _PHI + (int(k) & _MASK))
    return h


def random_u64(seed: int, count: int) -> np.ndarray:
    """Counter-mode splitmix64: element i is finalize(seed + (i+1) * phi)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK) + idx * np.uint64(_PHI)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def random_floats(seed: int, count: int) -> np.ndarray:
    """Uniform float64 samples in [0, 1) with 53 bits of entropy each."""
    return (random_u64(seed, count) >> np.uint64(11)) * 2.0 ** -53


def random_ints(seed: int, count: int, lo: int, hi: int) -> np.ndarray:
    """Uniform-ish integers in [lo, hi] inclusive (modulo reduction)."""
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    span = np.uint64(hi - lo + 1)
    return (random_u64(seed, count) % span).astype(np.int64) + lo
