"""Spiking DeepONet blocks, the ANN DeepONet baseline and the frozen block library."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .autodiff import ops
from .autodiff.module import MLP, BatchNorm1d, Linear, Module, count_parameters
from .autodiff.tensor import Tensor, as_tensor
from .spiking import LifLayer, SpikeStats, skip_combine

# elementary operator tags and the family each block is trained on
OPERATORS = ("conv", "diff", "react")
OP_FAMILY = {"conv": "convection", "diff": "diffusion", "react": "reaction"}
OP_STEPS = {"conv": 30, "diff": 20, "react": 20}
MONO_STEPS = 20


@dataclass
class DeepOnetArch:
    """Shape of a (spiking or ANN) DeepONet.

    ``trunk_hidden`` and ``branch_layers`` were chosen so the parameter counts
    land on 463,620 (spiking) and 397,057 (ANN).  ``trunk_scale`` multiplies
    the initial weights of the first trunk layer, and its biases place each
    unit's tanh transition at a uniform point of the domain, so the trunk
    resolves the higher Fourier modes of the targets from the start.
    """

    m: int = 256
    hidden: int = 256
    latent: int = 128
    branch_layers: int = 3
    trunk_hidden: tuple[int, ...] = (256, 256, 256)
    steps: int = 20
    use_skip: bool = True
    learn_beta: bool = True
    skip_init: float = 0.5
    beta_init: float = 0.85
    threshold: float = 1.0
    slope: float = 25.0
    trunk_scale: float = 30.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk_hidden"] = list(self.trunk_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeepOnetArch":
        d = dict(d)
        d["trunk_hidden"] = tuple(d.get("trunk_hidden", (256, 256, 256)))
        return cls(**d)


def query_points(m: int) -> np.ndarray:
    """Normalised grid coordinates used as trunk queries."""
    return np.arange(m) / m


class _DeepOnetBase(Module):
    kind = "deeponet"

    def __init__(self, arch: DeepOnetArch, rng: np.random.Generator):
        super().__init__()
        self.arch = arch
        self.trunk = MLP([1, *arch.trunk_hidden, arch.latent], "tanh", rng)
        # steep first layer whose tanh transitions are spread uniformly over [0, 1)
        first = self.trunk.layers[0]
        first.weight.data *= arch.trunk_scale
        first.bias.data[...] = -first.weight.data[:, 0] * rng.uniform(0.0, 1.0, first.out_features)
        self.frozen = False
        self.samples_seen = 0

    def trunk_features(self, y) -> Tensor:
        y = np.asarray(y.data if isinstance(y, Tensor) else y)
        if y.ndim != 1:
            raise ValueError("queries must be a 1-D array of coordinates")
        return self.trunk(Tensor(y[:, None]))

    def branch(self, u0) -> Tensor:
        raise NotImplementedError

    def forward(self, u0, y=None) -> Tensor:
        """``B(u0)(y) = b . t(y) + b0`` for a batch ``[B, m]``; returns ``[B, Q]``."""
        u0 = as_tensor(u0)
        if u0.ndim == 1:
            u0 = ops.reshape(u0, (1, -1))
        if u0.shape[1] != self.arch.m:
            raise ValueError(f"input has {u0.shape[1]} points, model expects {self.arch.m}")
        if y is None:
            y = query_points(self.arch.m)
        coeffs = self.branch(u0)
        p = self.arch.latent
        b = coeffs[:, :p]
        b0 = coeffs[:, p:]
        t = self.trunk_features(y)
        self.samples_seen += u0.shape[0]
        return ops.add(ops.matmul(b, ops.transpose(t)), b0)

    def freeze(self) -> "_DeepOnetBase":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        self.frozen = True
        self.train(False)
        return self

    def train(self, mode: bool = True):
        # frozen models stay on running statistics for deterministic inference
        object.__setattr__(self, "training", bool(mode) and not self.frozen)
        for child in self.child_modules():
            child.train(self.training)
        return self

    def spike_stats(self) -> SpikeStats:
        return SpikeStats([], self.samples_seen)

    def reset_spikes(self) -> None:
        self.samples_seen = 0


class SpikingDeepOnet(_DeepOnetBase):
    """Branch: linear projection, LIF layers with skip mixing, linear readout to
    ``(b, b0)``.  Trunk: tanh MLP on the query coordinate."""

    kind = "spiking"

    def __init__(self, arch: DeepOnetArch, rng: np.random.Generator, tag: str | None = None):
        super().__init__(arch, rng)
        self.tag = tag
        h = arch.hidden
        self.projection = Linear(arch.m, h, rng)
        self.lif_layers = [
            LifLayer(h, h, arch.steps, rng, threshold=arch.threshold, slope=arch.slope,
                     beta_init=arch.beta_init, learn_beta=arch.learn_beta,
                     use_skip=arch.use_skip, skip_init=arch.skip_init)
            for _ in range(arch.branch_layers)
        ]
        self.readout = Linear(h, arch.latent + 1, rng)

    @property
    def steps(self) -> int:
        return self.arch.steps

    def branch(self, u0) -> Tensor:
        x = self.projection(u0)
        for layer in self.lif_layers:
            rate = layer(x)
            x = skip_combine(rate, x, layer.gamma()) if layer.use_skip else rate
        return self.readout(x)

    def spike_stats(self) -> SpikeStats:
        return SpikeStats([layer.spikes for layer in self.lif_layers], self.samples_seen)

    def reset_spikes(self) -> None:
        self.samples_seen = 0
        for layer in self.lif_layers:
            layer.reset_spikes()


class AnnDeepOnet(_DeepOnetBase):
    """Non-spiking baseline: ReLU branch with batch norm, tanh trunk."""

    kind = "ann"

    def __init__(self, arch: DeepOnetArch, rng: np.random.Generator):
        super().__init__(arch, rng)
        h = arch.hidden
        sizes = [arch.m] + [h] * arch.branch_layers
        self.hidden_layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.norms = [BatchNorm1d(h) for _ in range(arch.branch_layers)]
        self.readout = Linear(h, arch.latent + 1, rng)

    def branch(self, u0) -> Tensor:
        x = u0
        for lin, bn in zip(self.hidden_layers, self.norms):
            x = ops.relu(bn(lin(x)))
        return self.readout(x)


def make_block(op: str, rng: np.random.Generator, **overrides) -> SpikingDeepOnet:
    if op not in OPERATORS:
        raise ValueError(f"unknown operator {op!r}; valid: {', '.join(OPERATORS)}")
    arch = DeepOnetArch(**{"steps": OP_STEPS[op], **overrides})
    return SpikingDeepOnet(arch, rng, tag=op)


def make_mono(rng: np.random.Generator, **overrides) -> SpikingDeepOnet:
    overrides.setdefault("steps", MONO_STEPS)
    return SpikingDeepOnet(DeepOnetArch(**overrides), rng)


def make_ann(rng: np.random.Generator, **overrides) -> AnnDeepOnet:
    return AnnDeepOnet(DeepOnetArch(**overrides), rng)


def param_count(model: Module) -> dict[str, int]:
    return count_parameters(model)


def freeze(model):
    return model.freeze()


class DuplicateBlockError(KeyError):
    pass


class BlockLibrary:
    """Ordered, append-only map from operator tag to a frozen block."""

    def __init__(self):
        self._blocks: dict[str, SpikingDeepOnet] = {}

    def add_block(self, tag: str, block: SpikingDeepOnet) -> "BlockLibrary":
        if tag in self._blocks:
            raise DuplicateBlockError(f"block {tag!r} already in library")
        self._blocks[tag] = block.freeze()
        return self

    def __getitem__(self, tag: str) -> SpikingDeepOnet:
        try:
            return self._blocks[tag]
        except KeyError:
            raise KeyError(f"no block {tag!r} in library (have {list(self._blocks)})") from None

    def __contains__(self, tag: str) -> bool:
        return tag in self._blocks

    def __iter__(self) -> Iterator[str]:
        return iter(self._blocks)

    def __len__(self) -> int:
        return len(self._blocks)

    def items(self):
        return self._blocks.items()

    def digests(self) -> dict[str, str]:
        return {tag: block.digest() for tag, block in self._blocks.items()}


def add_block(lib: BlockLibrary, tag: str, block: SpikingDeepOnet) -> BlockLibrary:
    return lib.add_block(tag, block)
