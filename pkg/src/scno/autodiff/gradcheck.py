"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``param``."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().data)
        flat[i] = orig - step
        down = float(fn().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max over elements of ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-4,
              floor: float = 1e-6) -> float:
    """Return the worst relative error between backprop and finite differences.

    ``fn`` must rebuild the graph on every call and return a scalar.  Use
    float64 tensors; float32 differences are too noisy at this step size.
    """
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        worst = max(worst, max_relative_error(a, numerical_gradient(fn, p, step), floor))
    return worst
