"""Reverse-mode automatic differentiation over numpy arrays.

Every differentiable operation returns a :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:meth:`Tensor.backward` walks that graph in reverse topological order and
accumulates gradients into leaf tensors that require them.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_state = {"dtype": np.dtype(np.float32), "grad_enabled": True, "check_finite": True}


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class GraphError(RuntimeError):
    """Raised for malformed backward calls (non-scalar loss, cyclic tape)."""


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors (e.g. float64 for gradchecks)."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


def set_finite_checks(flag: bool) -> None:
    _state["check_finite"] = bool(flag)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _state["check_finite"] and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


class Tensor:
    """Dense float array with an optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or _state["dtype"], copy=True)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable,
                op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- array protocol ------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff ------------------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor; it must be a scalar unless ``grad`` is given."""
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise GraphError("seed gradient shape mismatch")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    _check_finite(g, "backward")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise GraphError(f"{node._op}: gradient shape {pg.shape} != {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -----------------------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.slice_(self, index)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """Trainable leaf tensor.  ``requires_grad=False`` marks it frozen."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)

    @property
    def frozen(self) -> bool:
        return not self.requires_grad

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, frozen={self.frozen})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order (root first) with explicit cycle detection."""
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, Iterable]] = [(root, iter(root._parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if not parent.requires_grad:
                continue
            s = state.get(id(parent))
            if s == 1:
                raise GraphError("cycle detected in gradient tape")
            if s is None:
                state[id(parent)] = 1
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
    order.reverse()
    return order
