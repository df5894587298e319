"""Differentiable primitives.

Binary elementwise ops follow numpy broadcasting; gradients are summed back
to the operand shapes.  ``matmul`` supports ``(..., k) @ (k, n)``.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .. import _kernels
from .tensor import Tensor, as_tensor, get_default_dtype

_spike_cfg = {"smooth": False}


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- arithmetic ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _binary_shapes(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _binary_shapes(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _binary_shapes(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` as one tape node."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data if x.requires_grad else None
        gw = g2.T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return Tensor._result(out, parents, backward, "linear")


# -- elementwise nonlinearities -------------------------------------------------

def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid_np(x.data)
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    y = _kernels.gelu_forward(x.data)
    return Tensor._result(y, (x,), lambda g: (_kernels.gelu_backward(x.data, g),), "gelu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)  # overflow is reported by the finite check
    return Tensor._result(y, (x,), lambda g: (g * y,), "exp")


# -- reductions ----------------------------------------------------------------------

def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    y = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor._result(y, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    y = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True),)

    return Tensor._result(y, (x,), backward, "mean")


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over every element."""
    pred = as_tensor(pred)
    target = _lift(target, pred)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    val = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def backward(g):
        scale = 2.0 * g / n
        gp = (scale * diff).astype(pred.dtype) if pred.requires_grad else None
        gt = (-scale * diff).astype(pred.dtype) if target.requires_grad else None
        return gp, gt

    return Tensor._result(val, (pred, target), backward, "mse_loss")


# -- shape manipulation -------------------------------------------------------------

def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * nd
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    data = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._result(data, tensors, backward, "concat")


def slice_(x, index) -> Tensor:
    x = as_tensor(x)
    y = np.array(x.data[index], dtype=x.dtype)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g) if _needs_add_at(index) else full.__setitem__(index, g)
        return (full,)

    return Tensor._result(y, (x,), backward, "slice")


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ValueError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return Tensor._result(y, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    y = x.data.reshape(shape)
    return Tensor._result(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return Tensor._result(np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,), "transpose")


# -- spiking ------------------------------------------------------------------------

@contextlib.contextmanager
def surrogate_forward_mode(flag: bool = True):
    """Make spike forwards smooth so finite differences can check spiking paths.

    Test-only.  While active, ``spike_step`` and ``lif`` return
    ``0.5 + x / (1 + slope*|x|)`` (``x = membrane - threshold``), whose exact
    derivative is the fast-sigmoid surrogate, and the LIF reset is
    differentiated instead of detached.
    """
    prev = _spike_cfg["smooth"]
    _spike_cfg["smooth"] = bool(flag)
    try:
        yield
    finally:
        _spike_cfg["smooth"] = prev


def smooth_mode_active() -> bool:
    return _spike_cfg["smooth"]


def surrogate_derivative(x: np.ndarray, slope: float) -> np.ndarray:
    d = 1.0 + slope * np.abs(x)
    return 1.0 / (d * d)


def spike_step(membrane, threshold: float = 1.0, slope: float = 25.0) -> Tensor:
    """Heaviside spike with fast-sigmoid surrogate gradient."""
    if threshold <= 0 or slope <= 0:
        raise ValueError("spike_step requires positive threshold and slope")
    membrane = as_tensor(membrane)
    x = membrane.data - membrane.dtype.type(threshold)
    if _spike_cfg["smooth"]:
        y = 0.5 + x / (1.0 + slope * np.abs(x))
    else:
        y = (x >= 0).astype(membrane.dtype)
    y = y.astype(membrane.dtype, copy=False)
    return Tensor._result(y, (membrane,),
                          lambda g: ((g * surrogate_derivative(x, slope)).astype(g.dtype),),
                          "spike_step")


def lif(current, beta, threshold: float, slope: float, steps: int) -> tuple[Tensor, int]:
    """Fused LIF simulation over ``steps`` timesteps with constant input current.

    Returns the firing rate ``sum_t s_t / steps`` and the number of hard spikes
    (zero in smooth mode).  The reset term is detached in hard mode.
    """
    if threshold <= 0 or slope <= 0:
        raise ValueError("lif requires positive threshold and slope")
    if steps < 1:
        raise ValueError("lif requires at least one timestep")
    current = as_tensor(current)
    beta = _lift(beta, current)
    if current.ndim != 2 or beta.shape != (current.shape[1],):
        raise ValueError(f"lif: current {current.shape} and beta {beta.shape} mismatch")
    smooth = _spike_cfg["smooth"]
    save = current.requires_grad or beta.requires_grad
    rate, vhist, count = _kernels.lif_forward(current.data, beta.data, threshold, slope,
                                              steps, smooth=smooth, save=save)

    def backward(g):
        gi, gb = _kernels.lif_backward(g, vhist, beta.data, threshold, slope,
                                       detach_reset=not smooth)
        return gi, gb

    return Tensor._result(rate, (current, beta), backward, "lif"), count


# -- normalization ------------------------------------------------------------------

def batch_norm(x, weight, bias, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over axis 0 of a ``[batch, features]`` tensor.

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is conventional).
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError("batch_norm expects [batch, features]")
    n = x.shape[0]
    if training:
        if n < 2:
            raise ValueError("batch_norm in training mode needs a batch of at least 2")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu) * inv
    out = xhat * weight.data + bias.data

    def backward(g):
        gw = (g * xhat).sum(axis=0) if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * weight.data
            if training:
                gx = inv / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
            else:
                gx = gxhat * inv
            gx = gx.astype(x.dtype, copy=False)
        return gx, gw, gb

    return Tensor._result(out.astype(x.dtype, copy=False), (x, weight, bias), backward,
                          "batch_norm")
