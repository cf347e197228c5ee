"""Low-level jitted primitives shared by the field estimator and the
scan engine: scalar Sampson distance, the Gaussian similarity kernels,
and a counter-based xorshift RNG used wherever reproducible randomness
is needed inside compiled code.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64
BIG = 1e30


@njit(cache=True)
def _splitmix64(z):
    z = U64(z) + U64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@njit(cache=True)
def _rng_init(seed, stream):
    """Nonzero xorshift state from a seed and a stream index."""
    s = _splitmix64(U64(seed) * U64(0x9E3779B9) + U64(stream))
    if s == U64(0):
        s = U64(0x2545F4914F6CDD1D)
    return s


@njit(cache=True)
def _rng_next(state):
    """xorshift64* step; returns (new_state, value)."""
    x = state
    x ^= x >> U64(12)
    x ^= x << U64(25)
    x ^= x >> U64(27)
    return x, x * U64(0x2545F4914F6CDD1D)


@njit(cache=True)
def _rng_below(state, n):
    """(new_state, uniform int in [0, n))."""
    state, v = _rng_next(state)
    return state, np.int64(v % U64(n))


@njit(cache=True)
def _sampson_sq_scalar(x1, y1, x2, y2, f):
    """Squared Sampson distance of one already-scaled point pair."""
    fx0 = f[0, 0] * x1 + f[0, 1] * y1 + f[0, 2]
    fx1 = f[1, 0] * x1 + f[1, 1] * y1 + f[1, 2]
    fx2 = f[2, 0] * x1 + f[2, 1] * y1 + f[2, 2]
    ft0 = f[0, 0] * x2 + f[1, 0] * y2 + f[2, 0]
    ft1 = f[0, 1] * x2 + f[1, 1] * y2 + f[2, 1]
    num = x2 * fx0 + y2 * fx1 + fx2
    num = num * num
    den = fx0 * fx0 + fx1 * fx1 + ft0 * ft0 + ft1 * ft1
    if den <= 0.0:
        return BIG
    return num / den


@njit(cache=True)
def _sf_scalar(xr, yr, xs, ys, f, inv_dr, inv_ds, inv2se2):
    """Geometric similarity of one pixel pair; 0 on a degenerate pair."""
    d = _sampson_sq_scalar(xr * inv_dr, yr * inv_dr,
                           xs * inv_ds, ys * inv_ds, f)
    if d >= BIG:
        return 0.0
    return np.exp(-d * inv2se2)
