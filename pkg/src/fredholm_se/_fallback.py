"""Pure-Python twin of ``_kernels.pyx``; produces the identical stream."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def xoshiro_fill(state: np.ndarray, n: int) -> np.ndarray:
    s0, s1, s2, s3 = (int(v) for v in state)
    out = [0] * n
    for i in range(n):
        out[i] = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)
    return np.array(out, dtype=np.uint64)
