"""Minimal module system: parameter registration, buffers, train/eval modes."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Parameter, get_default_dtype


class Module:
    """Base class.  Parameters, buffers and submodules are discovered from
    attributes in assignment order, which fixes a stable naming scheme."""

    def __init__(self):
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __setattr__(self, name, value):
        if "_buffers" in self.__dict__ and name in self._buffers:
            self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in self.__dict__.items():
            if name.startswith("_") or name == "training":
                continue
            yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def child_modules(self) -> Iterator["Module"]:
        for _, value in self._children():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (item for item in value if isinstance(item, Module))

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", bool(mode))
        for child in self.child_modules():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - (set(own) | set(bufs))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            target = own[name].data if name in own else bufs[name]
            if target.shape != np.shape(value):
                raise ValueError(f"shape mismatch for {name}: {np.shape(value)} vs {target.shape}")
            target[...] = value

    def digest(self) -> str:
        """SHA-256 over names, shapes and bytes of every parameter and buffer."""
        h = hashlib.sha256()
        for name, arr in sorted(self.state_dict().items()):
            a = np.ascontiguousarray(arr)
            h.update(name.encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Linear(Module):
    """Affine map with the usual fan-in uniform initialisation."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (out_features, in_features)))
        self.bias = Parameter(_uniform(rng, bound, (out_features,))) if bias else None

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    """Batch normalisation over ``[batch, features]``; momentum 0.1, eps 1e-5."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dt = get_default_dtype()
        self.weight = Parameter(np.ones(features, dtype=dt))
        self.bias = Parameter(np.zeros(features, dtype=dt))
        self.register_buffer("running_mean", np.zeros(features, dtype=dt))
        self.register_buffer("running_var", np.ones(features, dtype=dt))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                              training=self.training, momentum=self.momentum, eps=self.eps)


class MLP(Module):
    """Stack of Linear layers with an activation between them (none after the last)."""

    _ACTS = {"tanh": ops.tanh, "gelu": ops.gelu, "relu": ops.relu}

    def __init__(self, sizes: list[int], activation: str, rng: np.random.Generator,
                 final_activation: bool = False):
        super().__init__()
        if activation not in self._ACTS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation
        self.final_activation = final_activation

    def forward(self, x):
        act = self._ACTS[self.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = act(x)
        return x


def count_parameters(module: Module) -> dict[str, int]:
    """Scalar parameter counts split into trainable and frozen."""
    trainable = sum(p.size for p in module.parameters() if p.requires_grad)
    frozen = sum(p.size for p in module.parameters() if not p.requires_grad)
    return {"total": trainable + frozen, "trainable": trainable, "frozen": frozen}
