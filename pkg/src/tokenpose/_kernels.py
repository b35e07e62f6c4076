"""Compiled elementwise kernels for the float32 training path."""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _cdf_loop(src, dst):
    for i in range(src.size):
        dst[i] = 0.5 * (1.0 + math.erf(src[i] * 0.7071067811865476))


def gaussian_cdf_f32(x: np.ndarray) -> np.ndarray:
    """Standard normal CDF of a float32 array via libm erf."""
    src = np.ascontiguousarray(x).reshape(-1)
    dst = np.empty_like(src)
    _cdf_loop(src, dst)
    return dst.reshape(x.shape)
