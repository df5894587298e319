"""Pure numpy implementations of the hot kernels.

LIF recurrence, for a constant synaptic current ``I`` injected at every step::

    v_0 = 0,  s_0 = 0
    v_t = beta * v_{t-1} + I - s_{t-1} * threshold      (soft reset)
    s_t = H(v_t - threshold)                            (H(0) = 1)
    rate = sum_t s_t / T

The backward pass uses the fast-sigmoid surrogate
``1 / (1 + slope * |v - threshold|)**2`` in place of ``H'``.  In smooth mode the
forward spike is ``0.5 + x / (1 + slope * |x|)``, whose exact derivative is
that same surrogate, so finite differences can check the whole path.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def lif_forward(current, beta, threshold, slope, steps, smooth, save):
    dtype = current.dtype
    thr = dtype.type(threshold)
    k = dtype.type(slope)
    v = np.zeros_like(current)
    s = np.zeros_like(current)
    acc = np.zeros_like(current)
    hist = np.empty((steps,) + current.shape, dtype=dtype) if save else None
    count = 0
    for t in range(steps):
        v = beta * v + current - s * thr
        if save:
            hist[t] = v
        if smooth:
            x = v - thr
            s = dtype.type(0.5) + x / (dtype.type(1.0) + k * np.abs(x))
        else:
            s = (v >= thr).astype(dtype)
            count += int(np.count_nonzero(s))
        acc = acc + s
    return acc / dtype.type(steps), hist, count


def lif_backward(grad_rate, vhist, beta, threshold, slope, detach_reset):
    steps = vhist.shape[0]
    gs = grad_rate.astype(np.float64) / steps
    b = beta.astype(np.float64)
    gnext = np.zeros_like(gs)
    gcur = np.zeros_like(gs)
    gbeta = np.zeros(gs.shape[1])
    for t in range(steps - 1, -1, -1):
        d = 1.0 + slope * np.abs(vhist[t].astype(np.float64) - threshold)
        ds = 1.0 / (d * d)
        if detach_reset:
            gv = gs * ds + b * gnext
        else:
            gv = (gs - threshold * gnext) * ds + b * gnext
        gcur += gv
        if t > 0:
            gbeta += (gv * vhist[t - 1]).sum(axis=0)
        gnext = gv
    return gcur.astype(grad_rate.dtype), gbeta.astype(grad_rate.dtype)


def gelu_forward(x):
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)


def gelu_backward(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return (g * (cdf + x * pdf)).astype(x.dtype, copy=False)
