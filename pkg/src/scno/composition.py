"""Gated aggregation of frozen blocks, the residual correction network and the
assembled compositional model."""

from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.module import MLP, Module, count_parameters
from .autodiff.tensor import Parameter, Tensor, as_tensor, get_default_dtype, no_grad
from .models import BlockLibrary, query_points
from .spiking import SpikeStats

# coupled family -> participating block tags, in aggregator input order
COMPOSITIONS = {
    "conv_diff": ("conv", "diff"),
    "react_diff": ("react", "diff"),
    "neutron_diff": ("diff", "react"),
    "burgers": ("conv", "diff"),
    "adv_react": ("conv", "react"),
}


class FrozenComponentError(RuntimeError):
    """A component that must be frozen for the requested stage is trainable."""


def _freeze_module(module: Module) -> None:
    for p in module.parameters():
        p.requires_grad = False
        p.grad = None


class Aggregator(Module):
    """``u(y) = s * MLP([o(y); c]) + (1 - s) * w . o(y)`` with ``s = sigmoid(g)``
    and ``c = f_ctx(u0)`` computed once per sample."""

    def __init__(self, tags, m: int, rng: np.random.Generator, *, context_hidden: int = 256,
                 context_dim: int = 64, hidden: int = 256, layers: int = 3):
        super().__init__()
        self.tags = tuple(tags)
        k = len(self.tags)
        dt = get_default_dtype()
        self.context = MLP([m, context_hidden, context_dim], "gelu", rng)
        self.combiner = MLP([k + context_dim] + [hidden] * layers + [1], "gelu", rng)
        self.linear_weights = Parameter(np.full(k, 1.0 / k, dtype=dt))
        self.gate_logit = Parameter(np.array(0.0, dtype=dt))
        self.config = {"m": m, "context_hidden": context_hidden, "context_dim": context_dim,
                       "hidden": hidden, "layers": layers}

    @property
    def gate(self) -> float:
        return float(ops._sigmoid_np(np.asarray(self.gate_logit.data, dtype=np.float64)))

    def freeze(self) -> "Aggregator":
        _freeze_module(self)
        return self

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def forward(self, block_outputs, u0) -> Tensor:
        """``block_outputs``: ``[B, Q, K]``; ``u0``: ``[B, m]``; returns ``[B, Q]``."""
        o = as_tensor(block_outputs)
        u0 = as_tensor(u0)
        if o.ndim != 3 or o.shape[2] != len(self.tags):
            raise ValueError(f"aggregator expects [B, Q, {len(self.tags)}] block outputs, "
                             f"got {o.shape}")
        bsz, q, k = o.shape
        c = self.context(u0)
        c = ops.broadcast_to(ops.reshape(c, (bsz, 1, c.shape[1])), (bsz, q, c.shape[1]))
        nonlinear = ops.reshape(self.combiner(ops.concat([o, c], axis=-1)), (bsz, q))
        linear = ops.sum_(ops.mul(o, self.linear_weights), axis=-1)
        s = ops.sigmoid(self.gate_logit)
        return ops.add(ops.mul(s, nonlinear), ops.mul(ops.sub(1.0, s), linear))


def aggregate(agg: Aggregator, block_outputs, u0) -> Tensor:
    return agg(block_outputs, u0)


def coordinate_features(y: np.ndarray, harmonics: int = 8) -> np.ndarray:
    """``[y, sin(2 pi n y), cos(2 pi n y)]`` for ``n = 1..harmonics``."""
    y = np.asarray(y, dtype=np.float64)
    n = np.arange(1, harmonics + 1)
    arg = 2.0 * np.pi * y[:, None] * n
    return np.concatenate([y[:, None], np.sin(arg), np.cos(arg)], axis=1)


class CorrectionNet(Module):
    """Non-spiking residual ``C(u0, y)`` on compressed context and Fourier
    coordinate features, scaled by a learnable ``alpha`` (initially 0.1)."""

    def __init__(self, m: int, rng: np.random.Generator, *, context_hidden: int = 160,
                 context_dim: int = 64, hidden: int = 128, layers: int = 3,
                 harmonics: int = 8, alpha_init: float = 0.1):
        super().__init__()
        self.harmonics = harmonics
        self.context = MLP([m, context_hidden, context_dim], "gelu", rng)
        self.core = MLP([context_dim + 1 + 2 * harmonics] + [hidden] * layers + [1], "gelu", rng)
        self.alpha = Parameter(np.array(alpha_init, dtype=get_default_dtype()))
        self.config = {"m": m, "context_hidden": context_hidden, "context_dim": context_dim,
                       "hidden": hidden, "layers": layers, "harmonics": harmonics}

    def freeze(self) -> "CorrectionNet":
        _freeze_module(self)
        return self

    def forward(self, u0, y=None) -> Tensor:
        """Unscaled correction ``C(u0, y)``, shape ``[B, Q]``."""
        u0 = as_tensor(u0)
        if y is None:
            y = query_points(u0.shape[1])
        feats = coordinate_features(y, self.harmonics).astype(u0.dtype)
        bsz, q = u0.shape[0], feats.shape[0]
        c = self.context(u0)
        c = ops.broadcast_to(ops.reshape(c, (bsz, 1, c.shape[1])), (bsz, q, c.shape[1]))
        f = Tensor(np.broadcast_to(feats, (bsz, q, feats.shape[1])), dtype=u0.dtype)
        out = self.core(ops.concat([c, f], axis=-1))
        return ops.reshape(out, (bsz, q))

    def scaled(self, u0, y=None) -> Tensor:
        return ops.mul(self.alpha, self.forward(u0, y))


class ScnoModel(Module):
    """Frozen blocks + aggregator + optional correction.

    Blocks are referenced, not copied, and are not children of this module:
    ``parameters()`` covers only the aggregator and correction.
    """

    def __init__(self, library: BlockLibrary, tags, aggregator: Aggregator,
                 correction: CorrectionNet | None = None, family: str | None = None):
        super().__init__()
        self._library = library
        self.tags = tuple(tags)
        self.aggregator = aggregator
        self.correction = correction
        self.family = family
        self.samples_seen = 0

    @property
    def blocks(self):
        return [self._library[t] for t in self.tags]

    def spiking_modules(self):
        return self.blocks

    def block_outputs(self, u0, y=None) -> np.ndarray:
        """Stacked frozen-block predictions ``[B, Q, K]`` (no tape)."""
        with no_grad():
            outs = [block(u0, y).data for block in self.blocks]
        return np.stack(outs, axis=-1)

    def forward(self, u0, y=None, block_outputs=None) -> Tensor:
        u0 = as_tensor(u0)
        if u0.ndim == 1:
            u0 = ops.reshape(u0, (1, -1))
        if block_outputs is None:
            block_outputs = self.block_outputs(u0, y)
        self.samples_seen += u0.shape[0]
        out = self.aggregator(block_outputs, u0)
        if self.correction is not None:
            out = ops.add(out, self.correction.scaled(u0, y))
        return out

    def set_stage(self, stage: str) -> "ScnoModel":
        """Make exactly the stage's parameters trainable: 'aggregator' or 'correction'."""
        for block in self.blocks:
            if not block.frozen:
                raise FrozenComponentError(f"block {block.tag!r} is not frozen")
        if stage == "aggregator":
            if self.aggregator.frozen:
                raise FrozenComponentError("aggregator is frozen; build a new one to retrain")
            if self.correction is not None:
                _freeze_module(self.correction)
        elif stage == "correction":
            if self.correction is None:
                raise ValueError("model has no correction network")
            self.aggregator.freeze()
        else:
            raise ValueError(f"unknown stage {stage!r}")
        return self

    def spike_stats(self) -> SpikeStats:
        stats = SpikeStats([], self.samples_seen)
        for block in self.blocks:
            stats.per_layer_spikes.extend(block.spike_stats().per_layer_spikes)
        return stats

    def reset_spikes(self) -> None:
        self.samples_seen = 0
        for block in self.blocks:
            block.reset_spikes()

    def param_counts(self) -> dict[str, int]:
        own = count_parameters(self)
        frozen_blocks = sum(count_parameters(b)["total"] for b in self.blocks)
        return {"trainable": own["trainable"], "total": own["total"] + frozen_blocks}


def assemble_scno(library: BlockLibrary, tags, aggregator: Aggregator,
                  correction: CorrectionNet | None = None, family: str | None = None) -> ScnoModel:
    tags = tuple(tags)
    missing = [t for t in tags if t not in library]
    if missing:
        raise KeyError(f"library is missing blocks {missing}")
    if aggregator.tags != tags:
        raise ValueError(f"aggregator built for {aggregator.tags}, composition needs {tags}")
    return ScnoModel(library, tags, aggregator, correction, family)


def scno_forward(model: ScnoModel, u0, y=None) -> Tensor:
    return model(u0, y)
