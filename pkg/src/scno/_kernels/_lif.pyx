# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LIF recurrence (forward and BPTT).

Semantics mirror :mod:`scno._kernels._fallback` exactly; see there for the
recurrence definition.
"""
import numpy as np
from libc.math cimport fabs

ctypedef fused real:
    float
    double



cdef inline double _surrogate(double x, double slope) nogil:
    cdef double d = 1.0 + slope * fabs(x)
    return 1.0 / (d * d)


def lif_forward(real[:, ::1] current, real[::1] beta, double threshold,
                double slope, int steps, bint smooth, bint save):
    cdef Py_ssize_t B = current.shape[0], N = current.shape[1]
    cdef Py_ssize_t b, n
    cdef int t
    dtype = np.float32 if real is float else np.float64
    rate = np.zeros((B, N), dtype=dtype)
    cdef real[:, ::1] r = rate
    cdef real[:, :, ::1] hist
    if save:
        vh = np.empty((steps, B, N), dtype=dtype)
        hist = vh
    else:
        vh = None
    # arithmetic stays in the array precision so results match the numpy path
    cdef real v, s, cur, bt, acc, x, ax
    cdef real thr = <real>threshold
    cdef real k = <real>slope
    cdef real half = 0.5
    cdef real one = 1.0
    cdef real n_steps = <real>steps
    cdef long long count = 0
    with nogil:
        for b in range(B):
            for n in range(N):
                v = 0
                s = 0
                acc = 0
                cur = current[b, n]
                bt = beta[n]
                for t in range(steps):
                    v = bt * v + cur - s * thr
                    if save:
                        hist[t, b, n] = v
                    if smooth:
                        x = v - thr
                        ax = x if x >= 0 else -x
                        s = half + x / (one + k * ax)
                    elif v >= thr:
                        s = 1
                        count += 1
                    else:
                        s = 0
                    acc = acc + s
                r[b, n] = acc / n_steps
    return rate, vh, int(count)


def lif_backward(real[:, ::1] grad_rate, real[:, :, ::1] vhist, real[::1] beta,
                 double threshold, double slope, bint detach_reset):
    cdef Py_ssize_t T = vhist.shape[0], B = vhist.shape[1], N = vhist.shape[2]
    cdef Py_ssize_t b, n
    cdef Py_ssize_t t
    dtype = np.float32 if real is float else np.float64
    gcur = np.zeros((B, N), dtype=dtype)
    gbeta_rows = np.zeros((B, N), dtype=np.float64)
    cdef real[:, ::1] gi = gcur
    cdef double[:, ::1] gbr = gbeta_rows
    cdef double gv, gnext, gs, ds, bt, vprev, acc_i, acc_b
    cdef double inv_steps = 1.0 / T
    with nogil:
        for b in range(B):
            for n in range(N):
                gs = grad_rate[b, n] * inv_steps
                bt = beta[n]
                gnext = 0.0
                acc_i = 0.0
                acc_b = 0.0
                for t in range(T - 1, -1, -1):
                    ds = _surrogate(vhist[t, b, n] - threshold, slope)
                    if detach_reset:
                        gv = gs * ds + bt * gnext
                    else:
                        gv = (gs - threshold * gnext) * ds + bt * gnext
                    acc_i += gv
                    if t > 0:
                        acc_b += gv * vhist[t - 1, b, n]
                    gnext = gv
                gi[b, n] = <real>acc_i
                gbr[b, n] = acc_b
    return gcur, gbeta_rows.sum(axis=0).astype(dtype)
