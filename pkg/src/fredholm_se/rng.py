"""Seeded random streams that reproduce bit-exactly across platforms.

Algorithm
---------
* Seeding: the 64-bit seed drives SplitMix64; its first four outputs form the
  256-bit xoshiro256** state.
* Stream: xoshiro256** (Blackman & Vigna).  Uniform doubles use the top 53
  bits, ``(x >> 11) * 2**-53``, so they lie in [0, 1).
* Normals: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``r = sqrt(-2 log(1 - u1))`` giving ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``.  A request for ``n`` normals consumes ``2 ceil(n/2)``
  uniforms; an odd trailing variate is discarded.
* Replication ``r`` of a sweep uses seed ``base_seed + r``.
"""

from __future__ import annotations

import numpy as np

from . import _backend

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> tuple[int, int]:
    """One SplitMix64 step; returns ``(new_state, output)``."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def derive_seed(seed: int, label: str) -> int:
    """Independent 64-bit seed for a named sub-stream of one run.

    Labels are folded in with FNV-1a, then scrambled by one SplitMix64 step.
    """
    h = 0xCBF29CE484222325
    for ch in label.encode():
        h = ((h ^ ch) * 0x100000001B3) & _MASK
    return splitmix64((int(seed) ^ h) & _MASK)[1]


class Rng:
    """xoshiro256** stream seeded through SplitMix64."""

    def __init__(self, seed: int):
        x = int(seed) & _MASK
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self.seed = int(seed)
        self._state = np.array(words, dtype=np.uint64)

    @property
    def state(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self._state)

    def next_u64(self, n: int) -> np.ndarray:
        return _backend.xoshiro_fill(self._state, int(n))

    def uniform(self, n: int, low=0.0, high=1.0) -> np.ndarray:
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if low == 0.0 and high == 1.0:
            return u
        return low + (high - low) * u

    def normal(self, n: int, mean=0.0, sd=1.0) -> np.ndarray:
        pairs = (int(n) + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([r * np.cos(angle), r * np.sin(angle)]).ravel()[:n]
        return mean + sd * z

    def bernoulli(self, prob) -> np.ndarray:
        prob = np.asarray(prob, dtype=np.float64)
        return (self.uniform(prob.size).reshape(prob.shape) < prob).astype(np.int64)

    def integers(self, n: int, high: int) -> np.ndarray:
        """Integers in ``[0, high)`` by scaling uniforms (bias < 2**-40 for small ``high``)."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)
