"""AdamW and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Parameter


@dataclass
class OptimizerState:
    """Moment buffers and constants for :func:`adamw_step`."""

    exp_avg: list[np.ndarray]
    exp_avg_sq: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kwargs) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params], **kwargs)


def adamw_step(params: list[Parameter], state: OptimizerState, lr: float | None = None) -> None:
    """One AdamW update (decoupled weight decay) applied in place.

    Frozen parameters and parameters without a gradient are left untouched,
    but the shared step counter still advances.
    """
    if len(params) != len(state.exp_avg):
        raise ValueError("optimizer state does not match the parameter list")
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.exp_avg, state.exp_avg_sq):
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(f"gradient/state shape mismatch for parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient passed to AdamW")
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v / bc2) + state.eps
        p.data -= (lr / bc1) * m / denom


class AdamW:
    """Thin stateful wrapper around :func:`adamw_step`."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.state = OptimizerState.for_params(self.params, lr=lr, weight_decay=weight_decay,
                                               beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adamw_step(self.params, self.state)


@dataclass
class CosineSchedule:
    """Half-cosine decay from ``lr0`` to ``floor`` over ``period`` epochs, then flat."""

    lr0: float
    period: int
    floor: float = 1e-5

    def __post_init__(self):
        if self.period <= 0 or self.lr0 <= 0 or not 0 < self.floor <= self.lr0:
            raise ValueError("cosine schedule needs period > 0 and 0 < floor <= lr0")

    def lr_at(self, epoch: int, metric: float | None = None) -> float:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        frac = min(epoch, self.period) / self.period
        return self.floor + 0.5 * (self.lr0 - self.floor) * (1.0 + math.cos(math.pi * frac))


@dataclass
class PlateauSchedule:
    """Reduce-on-plateau with milestone fallback.

    ``lr_at(epoch, metric)`` must be called once per epoch in order.  After more
    than ``patience`` consecutive epochs without a relative improvement of
    ``threshold`` the LR is multiplied by ``factor``.  At each milestone epoch,
    if no plateau reduction has fired since the previous milestone, the LR is
    also multiplied by ``factor``; unless ``unconditional`` is set this only
    happens when the current epoch did not improve the metric.
    """

    lr0: float
    factor: float = 0.5
    patience: int = 30
    milestones: tuple[int, ...] = (400, 600)
    unconditional: bool = False
    threshold: float = 1e-4
    min_lr: float = 1e-6
    lr: float = field(init=False)
    best: float = field(init=False, default=math.inf)
    bad_epochs: int = field(init=False, default=0)
    fired_since_milestone: bool = field(init=False, default=False)
    last_epoch: int = field(init=False, default=-1)

    def __post_init__(self):
        if not 0 < self.factor < 1 or self.patience < 0 or self.lr0 <= 0:
            raise ValueError("invalid plateau schedule parameters")
        self.lr = self.lr0
        self.milestones = tuple(sorted(self.milestones))

    def _reduce(self) -> None:
        self.lr = max(self.lr * self.factor, min(self.min_lr, self.lr))

    def lr_at(self, epoch: int, metric: float | None = None) -> float:
        if metric is None:
            raise ValueError("plateau schedule requires a metric every epoch")
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        if epoch <= self.last_epoch:
            raise ValueError("plateau schedule epochs must increase")
        self.last_epoch = epoch
        improved = metric < self.best * (1.0 - self.threshold)
        if improved:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self._reduce()
                self.bad_epochs = 0
                self.fired_since_milestone = True
        if epoch in self.milestones:
            if not self.fired_since_milestone and (self.unconditional or not improved):
                self._reduce()
            self.fired_since_milestone = False
        return self.lr


def make_schedule(kind: str, lr0: float, epochs: int, **kwargs):
    if kind == "cosine":
        return CosineSchedule(lr0=lr0, period=epochs, floor=kwargs.get("floor", 1e-5))
    if kind == "plateau":
        return PlateauSchedule(lr0=lr0, factor=kwargs.get("factor", 0.5),
                               patience=kwargs.get("patience", 30),
                               milestones=tuple(kwargs.get("milestones", (400, 600))),
                               unconditional=kwargs.get("unconditional", False))
    raise ValueError(f"unknown schedule {kind!r}")
