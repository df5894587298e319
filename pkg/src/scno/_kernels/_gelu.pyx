# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled exact GELU and its derivative.

Built with fast-math so the loops vectorise through libmvec's erf/exp.
"""
import numpy as np
from libc.math cimport erf, erff, exp, expf

ctypedef fused real:
    float
    double

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT2PI = 0.3989422804014327


def gelu_forward(real[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    dtype = np.float32 if real is float else np.float64
    out = np.empty(n, dtype=dtype)
    cdef real[::1] y = out
    with nogil:
        if real is float:
            for i in range(n):
                y[i] = 0.5 * x[i] * (1.0 + erff(x[i] * <float>INV_SQRT2))
        else:
            for i in range(n):
                y[i] = 0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2))
    return out


def gelu_backward(real[::1] x, real[::1] g):
    cdef Py_ssize_t i, n = x.shape[0]
    dtype = np.float32 if real is float else np.float64
    out = np.empty(n, dtype=dtype)
    cdef real[::1] gx = out
    cdef real xi
    with nogil:
        if real is float:
            for i in range(n):
                xi = x[i]
                gx[i] = g[i] * (0.5 * (1.0 + erff(xi * <float>INV_SQRT2))
                                + xi * <float>INV_SQRT2PI * expf(-0.5 * xi * xi))
        else:
            for i in range(n):
                xi = x[i]
                gx[i] = g[i] * (0.5 * (1.0 + erf(xi * INV_SQRT2))
                                + xi * INV_SQRT2PI * exp(-0.5 * xi * xi))
    return out
