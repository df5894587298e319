"""LIF spiking layer with batch-normalised synaptic current, learnable decay and skip weight."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.module import BatchNorm1d, Linear, Module
from .autodiff.tensor import Parameter, Tensor, as_tensor, get_default_dtype

THRESHOLD = 1.0
SURROGATE_SLOPE = 25.0
BETA_INIT = 0.85


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


@dataclass
class SpikeStats:
    per_layer_spikes: list[int] = field(default_factory=list)
    samples_seen: int = 0

    @property
    def total_spikes(self) -> int:
        return int(sum(self.per_layer_spikes))

    @property
    def spikes_per_sample(self) -> float:
        return self.total_spikes / self.samples_seen if self.samples_seen else 0.0

    def merge(self, other: "SpikeStats") -> "SpikeStats":
        return SpikeStats(self.per_layer_spikes + other.per_layer_spikes,
                          max(self.samples_seen, other.samples_seen))


def skip_combine(rate, x_in, gamma) -> Tensor:
    """Convex combination ``(1 - gamma) * rate + gamma * x_in``."""
    rate, x_in = as_tensor(rate), as_tensor(x_in)
    if rate.shape != x_in.shape:
        raise ValueError(f"skip_combine: shapes {rate.shape} and {x_in.shape} differ")
    return ops.add(ops.mul(ops.sub(1.0, gamma), rate), ops.mul(gamma, x_in))


def batchnorm_forward(x, bn: BatchNorm1d, mode: str) -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    return ops.batch_norm(x, bn.weight, bn.bias, bn.running_mean, bn.running_var,
                          training=mode == "train", momentum=bn.momentum, eps=bn.eps)


class LifLayer(Module):
    """``rate = LIF(BN(x W^T + b), T_s)`` with soft reset and ``beta = sigmoid(theta)``.

    ``learn_beta=False`` pins beta at its initial value and ``use_skip=False``
    pins the skip weight at 0; both then stop being parameters.
    """

    def __init__(self, in_features: int, out_features: int, steps: int,
                 rng: np.random.Generator, *, threshold: float = THRESHOLD,
                 slope: float = SURROGATE_SLOPE, beta_init: float = BETA_INIT,
                 learn_beta: bool = True, use_skip: bool = True, skip_init: float = 0.5,
                 batchnorm: bool = True):
        super().__init__()
        if steps < 1:
            raise ValueError("LIF layer needs at least one timestep")
        self.linear = Linear(in_features, out_features, rng)
        self.bn = BatchNorm1d(out_features) if batchnorm else None
        dt = get_default_dtype()
        theta = np.full(out_features, logit(beta_init), dtype=dt)
        if learn_beta:
            self.decay_logit = Parameter(theta)
        else:
            self.register_buffer("decay_logit", theta)
        if use_skip:
            self.skip_logit = Parameter(np.array(logit(skip_init), dtype=dt))
        self.steps = int(steps)
        self.threshold = float(threshold)
        self.slope = float(slope)
        self.use_skip = use_skip
        self.spikes = 0

    def beta(self) -> Tensor:
        theta = self.decay_logit
        return ops.sigmoid(theta if isinstance(theta, Tensor) else Tensor(theta, dtype=theta.dtype))

    def gamma(self) -> Tensor | float:
        return ops.sigmoid(self.skip_logit) if self.use_skip else 0.0

    def current(self, x) -> Tensor:
        i = self.linear(x)
        if self.bn is not None:
            i = batchnorm_forward(i, self.bn, "train" if self.training else "eval")
        return i

    def forward(self, x) -> Tensor:
        rate, count = ops.lif(self.current(x), self.beta(), self.threshold, self.slope,
                              self.steps)
        self.spikes += count
        return rate

    def reset_spikes(self) -> None:
        self.spikes = 0
