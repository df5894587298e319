"""Training loops for the four stages: elementary blocks, aggregators,
corrections and end-to-end baselines.

Every loop minimises the mean squared error over all grid queries with AdamW,
shuffles with a generator derived from the configured seed, and logs the test
relative L2 error every ``eval_every`` epochs.  Aggregator and correction
stages run on cached outputs of their frozen upstream components; frozen
inference is deterministic, so the cache is exact.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import ops
from .autodiff.optim import AdamW, make_schedule
from .autodiff.tensor import NonFiniteError, Tensor, no_grad
from .checkpoint import save_checkpoint
from .composition import (COMPOSITIONS, Aggregator, CorrectionNet, FrozenComponentError,
                          ScnoModel, assemble_scno)
from .dataset import Dataset
from .models import OP_FAMILY, OPERATORS, BlockLibrary, make_ann, make_block, make_mono
from .pde import FAMILIES

log = logging.getLogger(__name__)

STAGES = ("block", "aggregator", "correction", "baseline")

# operators that commute with u -> s*u + a (linear, constants are steady states)
AFFINE_OPERATORS = ("conv", "diff")


class TrainingDivergedError(FloatingPointError):
    """Loss or gradients became non-finite."""


@dataclass
class TrainConfig:
    """Optimisation settings for one training stage.

    ``milestones`` are the epochs at which the plateau schedule halves the
    learning rate if no plateau reduction fired since the previous milestone.
    """

    epochs: int = 800
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    schedule: str = "plateau"
    plateau_factor: float = 0.5
    patience: int = 30
    milestones: tuple[int, ...] = (400, 600)
    unconditional_milestones: bool = False
    lr_floor: float = 1e-5
    eval_every: int = 10
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.schedule not in ("plateau", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def make_schedule(self):
        return make_schedule(self.schedule, self.lr, self.epochs, factor=self.plateau_factor,
                             patience=self.patience, milestones=self.milestones,
                             unconditional=self.unconditional_milestones, floor=self.lr_floor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


def stage_config(stage: str, profile: str = "full", **overrides) -> TrainConfig:
    """Default configuration for ``stage`` under the ``full`` or ``desk`` profile."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; valid: {', '.join(STAGES)}")
    if stage in ("block", "baseline"):
        cfg = TrainConfig(epochs=800, schedule="plateau")
    else:
        cfg = TrainConfig(epochs=300, schedule="cosine")
    if profile == "desk":
        cfg = replace(cfg, epochs=200, batch_size=16, milestones=(100, 150))
    elif profile != "full":
        raise ValueError(f"unknown profile {profile!r}")
    return replace(cfg, **overrides)


@dataclass
class TrainRecord:
    stage: str
    name: str
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    test_rel_l2: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    digest: str = ""

    def log_epoch(self, epoch: int, loss: float, lr: float, test: float | None) -> None:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("epoch index must increase")
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.lr.append(lr)
        self.test_rel_l2.append(float("nan") if test is None else test)

    @property
    def final_test(self) -> float:
        logged = [v for v in self.test_rel_l2 if np.isfinite(v)]
        return logged[-1] if logged else float("nan")

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "test_rel_l2", "lr"])
            for e, l, t, r in zip(self.epochs, self.loss, self.test_rel_l2, self.lr):
                w.writerow([e, repr(l), "" if not np.isfinite(t) else repr(t), repr(r)])
        return path


@dataclass(frozen=True)
class AffineAugment:
    """Random affine maps ``u -> s*u + a`` applied to inputs and targets alike.

    Exact for operators in :data:`AFFINE_OPERATORS`.  Each sample is left
    untouched with probability ``keep``; otherwise ``s`` and ``a`` are drawn
    uniformly from ``scale`` and ``shift``.  The default ranges cover the
    positive-valued initial conditions of the reaction-containing families,
    which these blocks meet inside compositions.
    """

    keep: float = 0.5
    scale: tuple[float, float] = (0.4, 1.0)
    shift: tuple[float, float] = (-0.6, 0.6)

    def __call__(self, rng: np.random.Generator, u0: np.ndarray, uT: np.ndarray):
        n = len(u0)
        s = rng.uniform(*self.scale, size=(n, 1))
        a = rng.uniform(*self.shift, size=(n, 1))
        keep = rng.random((n, 1)) < self.keep
        s = np.where(keep, 1.0, s).astype(u0.dtype)
        a = np.where(keep, 0.0, a).astype(u0.dtype)
        return s * u0 + a, s * uT + a


def relative_l2_batch(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-sample ``||pred - truth|| / ||truth||`` in float64."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    norms = np.linalg.norm(truth, axis=-1)
    if np.any(norms == 0):
        raise ValueError("relative L2 undefined for an all-zero target")
    return np.linalg.norm(pred - truth, axis=-1) / norms


def predict(fn, n: int, batch: int = 100) -> np.ndarray:
    """Concatenate ``fn(slice)`` over ``range(n)`` in batches, without a tape."""
    with no_grad():
        return np.concatenate([fn(slice(i, min(i + batch, n))) for i in range(0, n, batch)])


def _batches(rng: np.random.Generator, n: int, size: int):
    order = rng.permutation(n)
    for i in range(0, n, size):
        idx = order[i:i + size]
        if len(idx) >= 2:  # batch norm needs two samples
            yield idx


def fit(params, loss_fn, n_train: int, cfg: TrainConfig, record: TrainRecord,
        test_fn=None, on_epoch=None) -> TrainRecord:
    """Generic loop: ``loss_fn(idx)`` returns a scalar loss Tensor for a batch of
    sample indices; ``test_fn()`` returns the test relative L2 error."""
    params = [p for p in params if p.requires_grad]
    if not params:
        raise FrozenComponentError("nothing to train: every parameter is frozen")
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = cfg.make_schedule()
    rng = np.random.default_rng([cfg.seed, 7919])
    start = time.perf_counter()
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        opt.lr = lr
        total, count = 0.0, 0
        for idx in _batches(rng, n_train, cfg.batch_size):
            opt.zero_grad()
            try:
                loss = loss_fn(idx)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NonFiniteError("loss")
                loss.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"{record.stage} {record.name!r} diverged at epoch {epoch} "
                    f"(lr {lr:.3g}): {exc}") from None
            total += value * len(idx)
            count += len(idx)
        epoch_loss = total / count
        last = epoch == cfg.epochs - 1
        test = test_fn() if test_fn is not None and (epoch % cfg.eval_every == 0 or last) else None
        record.log_epoch(epoch, epoch_loss, lr, test)
        if test is not None:
            log.info("%s %s epoch %d loss %.3e test %.4f lr %.2e", record.stage, record.name,
                     epoch, epoch_loss, test, lr)
        if on_epoch is not None:
            on_epoch(epoch)
        lr = sched.lr_at(epoch + 1, epoch_loss)
    record.wall_time = time.perf_counter() - start
    return record


def _finish(model, record: TrainRecord, out: str | Path | None, meta: dict):
    if out is not None:
        out = Path(out)
        record.digest = save_checkpoint(model, out, meta=meta)
        record.write_csv(out.with_suffix(".csv"))
    else:
        record.digest = model.digest()
    return model, record


def _operator_fit(model, train: Dataset, test: Dataset | None, cfg: TrainConfig,
                  record: TrainRecord, augment: AffineAugment | None = None):
    """End-to-end regression of ``uT`` on ``u0`` (blocks and baselines)."""
    u0, uT = train.u0, train.uT
    arng = np.random.default_rng([cfg.seed, 31337])

    def loss_fn(idx):
        model.train()
        x, y = u0[idx], uT[idx]
        if augment is not None:
            x, y = augment(arng, x, y)
        return ops.mse_loss(model(x), Tensor(y))

    def test_fn():
        model.eval()
        pred = predict(lambda s: model(test.u0[s]).data, len(test))
        model.train()
        return float(relative_l2_batch(pred, test.uT).mean())

    fit(model.parameters(), loss_fn, len(train), cfg, record,
        test_fn if test is not None else None)
    model.eval()
    return model


def train_block(tag: str, train: Dataset, test: Dataset | None = None,
                cfg: TrainConfig | None = None, out=None, ablate: bool = False,
                allow_family_mismatch: bool = False, augment: bool | None = None, **arch):
    """Train and freeze an elementary block.

    ``ablate`` disables the skip connections and pins the decay rate.
    ``augment`` turns on :class:`AffineAugment`; by default it is on exactly
    for the operators in :data:`AFFINE_OPERATORS` and it is refused for others.
    """
    if tag not in OPERATORS:
        raise ValueError(f"unknown operator {tag!r}; valid: {', '.join(OPERATORS)}")
    if train.family.tag != OP_FAMILY[tag] and not allow_family_mismatch:
        raise ValueError(f"block {tag!r} trains on {OP_FAMILY[tag]} data, got {train.family.tag}")
    if augment is None:
        augment = tag in AFFINE_OPERATORS
    if augment and tag not in AFFINE_OPERATORS:
        raise ValueError(f"affine augmentation is not exact for operator {tag!r}")
    cfg = cfg or stage_config("block")
    if ablate:
        arch = {**arch, "use_skip": False, "learn_beta": False}
    block = make_block(tag, np.random.default_rng([cfg.seed, OPERATORS.index(tag)]), **arch)
    record = TrainRecord("block", tag + ("-ablated" if ablate else ""))
    _operator_fit(block, train, test, cfg, record, AffineAugment() if augment else None)
    block.freeze()
    return _finish(block, record, out, {"family": train.family.tag, "seed": cfg.seed,
                                        "ablated": ablate, "augmented": augment,
                                        "config": cfg.to_dict()})


def train_baseline(kind: str, train: Dataset, test: Dataset | None = None,
                   cfg: TrainConfig | None = None, out=None, **arch):
    """End-to-end monolithic spiking DeepONet (``mono``) or ANN DeepONet (``ann``)."""
    cfg = cfg or stage_config("baseline")
    rng = np.random.default_rng([cfg.seed, 101 if kind == "mono" else 202])
    if kind == "mono":
        model = make_mono(rng, **arch)
    elif kind == "ann":
        model = make_ann(rng, **arch)
    else:
        raise ValueError(f"unknown baseline {kind!r}; valid: mono, ann")
    record = TrainRecord("baseline", f"{kind}-{train.family.tag}")
    _operator_fit(model, train, test, cfg, record)
    model.freeze()
    return _finish(model, record, out, {"family": train.family.tag, "seed": cfg.seed,
                                        "config": cfg.to_dict()})


def _check_blocks_frozen(library: BlockLibrary, tags) -> dict[str, str]:
    for t in tags:
        if not library[t].frozen or any(p.requires_grad for p in library[t].parameters()):
            raise FrozenComponentError(f"block {t!r} is not frozen; refusing to train downstream")
    return {t: library[t].digest() for t in tags}


def _assert_unchanged(before: dict[str, str], after: dict[str, str], what: str) -> None:
    changed = [k for k in before if before[k] != after.get(k)]
    if changed:
        raise FrozenComponentError(f"{what} {changed} changed during training")


def fit_aggregator(model: ScnoModel, train: Dataset, test: Dataset | None, cfg: TrainConfig,
                   record: TrainRecord) -> TrainRecord:
    """Fit ``model.aggregator`` on cached outputs of the model's frozen blocks."""
    aggregator = model.aggregator
    aggregator.train()
    bo_train = model.block_outputs(train.u0)
    bo_test = model.block_outputs(test.u0) if test is not None else None

    def loss_fn(idx):
        return ops.mse_loss(aggregator(bo_train[idx], train.u0[idx]), Tensor(train.uT[idx]))

    def test_fn():
        pred = predict(lambda s: aggregator(bo_test[s], test.u0[s]).data, len(test))
        return float(relative_l2_batch(pred, test.uT).mean())

    return fit(aggregator.parameters(), loss_fn, len(train), cfg, record,
               test_fn if test is not None else None)


def train_aggregator(library: BlockLibrary, family: str, train: Dataset,
                     test: Dataset | None = None, cfg: TrainConfig | None = None, out=None,
                     aggregator: Aggregator | None = None, **arch):
    """Train a fresh aggregator over frozen blocks; returns ``(ScnoModel, record)``.

    ``arch`` holds :class:`Aggregator` size options for a freshly built aggregator.
    """
    tags = COMPOSITIONS[family]
    if train.family.tag != family:
        raise ValueError(f"aggregator for {family} got {train.family.tag} data")
    before = _check_blocks_frozen(library, tags)
    cfg = cfg or stage_config("aggregator")
    if aggregator is None:
        rng = np.random.default_rng([cfg.seed, 300 + FAMILIES.index(family)])
        aggregator = Aggregator(tags, train.grid.m, rng, **arch)
    model = assemble_scno(library, tags, aggregator, family=family)
    model.set_stage("aggregator")
    record = TrainRecord("aggregator", family)
    fit_aggregator(model, train, test, cfg, record)
    _assert_unchanged(before, {t: library[t].digest() for t in tags}, "blocks")
    aggregator.freeze()
    model.reset_spikes()
    _finish(aggregator, record, out, {"family": family, "seed": cfg.seed,
                                      "block_digests": before, "config": cfg.to_dict()})
    return model, record


def train_correction(model: ScnoModel, train: Dataset, test: Dataset | None = None,
                     cfg: TrainConfig | None = None, out=None,
                     correction: CorrectionNet | None = None, **arch):
    """Attach and train a correction network; blocks and aggregator stay frozen."""
    if not model.aggregator.frozen:
        raise FrozenComponentError("aggregator must be frozen before correction training")
    before = _check_blocks_frozen(model._library, model.tags)
    before["aggregator"] = model.aggregator.digest()
    cfg = cfg or stage_config("correction")
    if correction is None:
        rng = np.random.default_rng([cfg.seed, 400 + FAMILIES.index(train.family.tag)])
        correction = CorrectionNet(train.grid.m, rng, **arch)
    model.correction = correction
    model.set_stage("correction")
    agg = model.aggregator

    def upstream(ds):
        bo = model.block_outputs(ds.u0)
        return predict(lambda s: agg(bo[s], ds.u0[s]).data, len(ds))

    base_train = upstream(train)
    base_test = upstream(test) if test is not None else None

    def loss_fn(idx):
        pred = ops.add(Tensor(base_train[idx]), correction.scaled(train.u0[idx]))
        return ops.mse_loss(pred, Tensor(train.uT[idx]))

    def test_fn():
        pred = predict(lambda s: base_test[s] + correction.scaled(test.u0[s]).data, len(test))
        return float(relative_l2_batch(pred, test.uT).mean())

    record = TrainRecord("correction", train.family.tag)
    fit(correction.parameters(), loss_fn, len(train), cfg, record,
        test_fn if test is not None else None)
    after = {t: model._library[t].digest() for t in model.tags}
    after["aggregator"] = agg.digest()
    _assert_unchanged(before, after, "upstream components")
    correction.freeze()
    model.reset_spikes()
    _finish(correction, record, out, {"family": train.family.tag, "seed": cfg.seed,
                                      "upstream_digests": before, "config": cfg.to_dict()})
    return model, record
