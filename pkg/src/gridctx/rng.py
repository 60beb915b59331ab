"""Deterministic, portable random-number streams.

Every random decision in this package is derived from a single 64-bit root
seed through SplitMix64 hashing, so regenerating any artifact with the same
seed is byte-identical and independent of evaluation order or threading.

Stream derivation
-----------------
``derive_seed(root, *path)`` folds a sequence of integer path words (e.g.
``(seed, class_id, sample_index)``) into one 64-bit value.  Each word is
mixed with the running state through the SplitMix64 finalizer:

    state <- mix64(state + GOLDEN) XOR mix64(word + GOLDEN)   per word
    out   <- mix64(state + GOLDEN)

where ``mix64`` is the standard SplitMix64 output function

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

with all arithmetic modulo 2**64 and GOLDEN = 0x9E3779B97F4A7C15.

Bulk draws (weight init, shuffles, dropout masks, scene geometry) use a
``numpy.random.Generator`` backed by PCG64 and seeded with the derived
value.  The PCG64 bit stream is fixed by numpy's compatibility policy, so
the combination is reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output function (finalizing 64-bit hash)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(root: int, *path: int) -> int:
    """Derive a 64-bit stream seed from a root seed and integer path words."""
    state = root & _MASK64
    for word in path:
        state = mix64(state + _GOLDEN) ^ mix64((int(word) & _MASK64) + _GOLDEN)
    return mix64(state + _GOLDEN)


def generator(root: int, *path: int) -> np.random.Generator:
    """A PCG64 generator on the stream identified by (root, *path)."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, *path)))
