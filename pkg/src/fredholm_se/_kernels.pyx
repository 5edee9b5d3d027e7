# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled xoshiro256** integer stream.

Every random draw in the package (grids, initial weights, simulated data)
goes through this loop.  ``_fallback.py`` holds a bit-identical
pure-Python twin; ``_backend.py`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t

cnp.import_array()


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(uint64_t[::1] state, Py_ssize_t n):
    """Advance ``state`` (4 words, updated in place) by ``n`` draws and
    return the raw 64-bit outputs."""
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef uint64_t t
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out
