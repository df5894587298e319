"""Metrics, spike and energy accounting, the continual-learning and isolation
experiments, and the coupled-PDE comparison table."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.module import count_parameters
from .composition import COMPOSITIONS, ScnoModel, assemble_scno
from .dataset import Dataset
from .models import OP_FAMILY, OPERATORS, AnnDeepOnet, BlockLibrary, SpikingDeepOnet
from .trainer import (TrainConfig, TrainRecord, fit_aggregator, predict, relative_l2_batch,
                      stage_config, train_aggregator, train_block)

JOULES_PER_SPIKE = 0.9e-12
COUPLED_ROWS = ("conv_diff", "react_diff", "neutron_diff", "burgers", "adv_react")
METHODS = ("SCNO", "SCNO+Corr", "MonoSNN", "ANN")
GAP = "--"


class ForgettingError(AssertionError):
    """A library block's output changed after the library grew."""


class ReportGapError(ValueError):
    """A requested table cell has no results (strict mode)."""


def relative_l2(pred, truth) -> float:
    """``||pred - truth||_2 / ||truth||_2``; for 2-D input, the mean over samples."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if truth.ndim == 1:
        return float(relative_l2_batch(pred[None], truth[None])[0])
    return float(relative_l2_batch(pred, truth).mean())


def energy_estimate(spikes) -> float:
    """Energy in joules at 0.9 pJ per spike.

    A lower bound: non-spiking parts (trunk, aggregator, correction) are not counted.
    """
    if np.any(np.asarray(spikes) < 0):
        raise ValueError("spike count must be non-negative")
    return spikes * JOULES_PER_SPIKE


@dataclass
class EvalResult:
    family: str
    method: str
    seed: int
    rel_l2: float
    spikes_per_inference: float = 0.0
    energy_j: float = 0.0
    trainable_params: int = 0
    total_params: int = 0
    gate: float | None = None
    alpha: float | None = None
    output_digest: str = ""

    def to_row(self) -> dict:
        return asdict(self)


def predict_model(model, u0: np.ndarray, batch: int = 100) -> np.ndarray:
    """Eval-mode predictions on every grid point, ``[n, m]``."""
    model.eval()
    return predict(lambda s: model(u0[s]).data, len(u0), batch)


def _spike_count(model) -> tuple[int, int]:
    if isinstance(model, (ScnoModel, SpikingDeepOnet)):
        stats = model.spike_stats()
        return stats.total_spikes, stats.samples_seen
    return 0, 0


def evaluate(model, test: Dataset, method: str, seed: int = 0) -> EvalResult:
    """Relative L2, spikes per inference, energy and parameter counts on ``test``."""
    if hasattr(model, "reset_spikes"):
        model.reset_spikes()
    pred = predict_model(model, test.u0)
    spikes, seen = _spike_count(model)
    per_inf = spikes / seen if seen else 0.0
    if isinstance(model, ScnoModel):
        counts = model.param_counts()
        trainable = (count_parameters(model.correction)["total"] if model.correction is not None
                     else count_parameters(model.aggregator)["total"])
        total = counts["total"]
        gate = model.aggregator.gate
        alpha = float(model.correction.alpha.data) if model.correction is not None else None
    else:
        trainable = total = count_parameters(model)["total"]
        gate = alpha = None
    return EvalResult(
        family=test.family.tag, method=method, seed=seed,
        rel_l2=float(relative_l2_batch(pred, test.uT).mean()),
        spikes_per_inference=per_inf, energy_j=energy_estimate(per_inf),
        trainable_params=trainable, total_params=total, gate=gate, alpha=alpha,
        output_digest=hashlib.sha256(np.ascontiguousarray(pred).tobytes()).hexdigest(),
    )


def spike_ratio(scno: ScnoModel, mono, test: Dataset) -> float:
    """Mean spikes per inference of ``scno`` over that of ``mono`` on the same inputs."""
    a = evaluate(scno, test, "SCNO").spikes_per_inference
    b = evaluate(mono, test, "MonoSNN").spikes_per_inference
    if b == 0:
        raise ZeroDivisionError("reference model emitted no spikes")
    return a / b


def write_results_csv(results: list[EvalResult], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(EvalResult.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in results:
            w.writerow(r.to_row())
    return path


def read_results_csv(path) -> list[EvalResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalResult(
                family=row["family"], method=row["method"], seed=int(row["seed"]),
                rel_l2=float(row["rel_l2"]),
                spikes_per_inference=float(row["spikes_per_inference"]),
                energy_j=float(row["energy_j"]), trainable_params=int(row["trainable_params"]),
                total_params=int(row["total_params"]),
                gate=float(row["gate"]) if row["gate"] else None,
                alpha=float(row["alpha"]) if row["alpha"] else None,
                output_digest=row["output_digest"]))
    return out


# -- continual learning -------------------------------------------------------

@dataclass
class PhaseRow:
    phase: int
    added: str
    block: str
    rel_l2: float
    output_digest: str


def continual_experiment(data: dict[str, tuple[Dataset, Dataset]], seed: int = 0,
                         cfg: TrainConfig | None = None,
                         blocks: dict[str, SpikingDeepOnet] | None = None,
                         arch: dict[str, dict] | None = None) -> list[PhaseRow]:
    """Grow a library one operator per phase and re-evaluate every present block.

    ``data`` maps operator tag to ``(train, test)``.  Pre-trained ``blocks`` skip
    the training step of their phase; ``arch`` maps a tag to extra
    ``train_block`` keyword arguments.
    Raises :class:`ForgettingError` if any
    block's test predictions differ by a single byte between phases.
    """
    library = BlockLibrary()
    rows: list[PhaseRow] = []
    reference: dict[str, tuple[bytes, float]] = {}
    blocks = blocks or {}
    for phase, tag in enumerate(OPERATORS, start=1):
        if tag in blocks:
            block = blocks[tag]
        else:
            train, test = data[tag]
            block, _ = train_block(tag, train, test, cfg or stage_config("block", seed=seed),
                                   **(arch or {}).get(tag, {}))
        library.add_block(tag, block)
        for present in library:
            test = data[present][1]
            pred = predict_model(library[present], test.u0)
            raw = np.ascontiguousarray(pred).tobytes()
            err = float(relative_l2_batch(pred, test.uT).mean())
            if present in reference:
                ref_raw, ref_err = reference[present]
                if raw != ref_raw or err != ref_err:
                    diff = np.frombuffer(raw, np.uint8) != np.frombuffer(ref_raw, np.uint8)
                    raise ForgettingError(
                        f"block {present!r} changed at phase {phase}: {int(diff.sum())} bytes "
                        f"differ, error {ref_err!r} -> {err!r}")
            else:
                reference[present] = (raw, err)
            rows.append(PhaseRow(phase, tag, present, err, hashlib.sha256(raw).hexdigest()))
    return rows


def write_phase_table(rows: list[PhaseRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "added", "block", "rel_l2", "output_digest"])
        for r in rows:
            w.writerow([r.phase, r.added, r.block, repr(r.rel_l2), r.output_digest])
    return path


# -- aggregator isolation ---------------------------------------------------

@dataclass
class IsolationResult:
    error_before: float
    error_after: float
    shared: bool
    burgers: ScnoModel = field(repr=False)
    record: TrainRecord = field(repr=False)

    @property
    def delta(self) -> float:
        return self.error_after - self.error_before


def isolation_experiment(library: BlockLibrary, react_diff: ScnoModel, react_diff_test: Dataset,
                         burgers_train: Dataset, burgers_test: Dataset | None = None,
                         cfg: TrainConfig | None = None, seed: int = 0, shared: bool = False,
                         out=None, aggregator_arch: dict | None = None) -> IsolationResult:
    """Measure the react-diff error before and after training a burgers aggregator
    on the same frozen library.

    ``shared=True`` is a negative control: the react-diff aggregator instance
    itself is unfrozen and retrained on burgers data, so the error must move.
    """
    before = evaluate(react_diff, react_diff_test, "SCNO", seed).rel_l2
    cfg = cfg or stage_config("aggregator", seed=seed)
    if shared:
        agg = react_diff.aggregator
        for p in agg.parameters():
            p.requires_grad = True
        burgers = ScnoModel(library, COMPOSITIONS["burgers"], agg, family="burgers")
        record = TrainRecord("aggregator", "burgers-shared")
        fit_aggregator(burgers, burgers_train, burgers_test, cfg, record)
        agg.freeze()
    else:
        burgers, record = train_aggregator(library, "burgers", burgers_train, burgers_test, cfg,
                                           out=out, **(aggregator_arch or {}))
    after = evaluate(react_diff, react_diff_test, "SCNO", seed).rel_l2
    return IsolationResult(before, after, shared, burgers, record)


# -- comparison table ---------------------------------------------------------

def _cell(values: list[float]) -> str:
    pct = 100.0 * np.asarray(values, dtype=np.float64)
    return f"{pct.mean():.1f}±{pct.std(ddof=0):.1f}"


def _kilo(n: int) -> str:
    return f"{n / 1000:.0f}K ({n})"


def table2_report(results: list[EvalResult], path=None, strict: bool = False,
                  families=COUPLED_ROWS, methods=METHODS) -> str:
    """Relative L2 (%) as mean±std over seeds (population std), one row per
    coupled family, plus a trainable-parameter row.  Missing cells hold ``--``."""
    cells: dict[tuple[str, str], list[float]] = {}
    params: dict[str, int] = {}
    for r in results:
        cells.setdefault((r.family, r.method), []).append(r.rel_l2)
        params.setdefault(r.method, r.trainable_params)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pde", *methods])
    gaps = []
    for fam in families:
        row = [fam]
        for meth in methods:
            vals = cells.get((fam, meth))
            if vals:
                row.append(_cell(vals))
            else:
                row.append(GAP)
                gaps.append(f"{fam}/{meth}")
        w.writerow(row)
    w.writerow(["trainable_params", *(_kilo(params[m]) if m in params else GAP for m in methods)])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    if strict and gaps:
        raise ReportGapError(f"missing table cells: {', '.join(gaps)}")
    return text


def block_errors(library: BlockLibrary, data: dict[str, Dataset]) -> dict[str, float]:
    """Test error of each library block on its own elementary family."""
    return {tag: evaluate(library[tag], data[tag], tag).rel_l2 for tag in library}


def model_method(model) -> str:
    if isinstance(model, ScnoModel):
        return "SCNO+Corr" if model.correction is not None else "SCNO"
    if isinstance(model, AnnDeepOnet):
        return "ANN"
    return "MonoSNN"


__all__ = [
    "JOULES_PER_SPIKE", "COUPLED_ROWS", "METHODS", "ForgettingError", "ReportGapError",
    "relative_l2", "energy_estimate", "EvalResult", "evaluate", "spike_ratio",
    "continual_experiment", "isolation_experiment", "table2_report", "PhaseRow",
    "IsolationResult", "write_results_csv", "read_results_csv", "write_phase_table",
    "block_errors", "model_method", "assemble_scno", "OP_FAMILY",
]
