"""Command-line entry point: ``scno <command> [options]``.

Exit status is 0 on success, 1 on validation errors (bad arguments, unknown
names, missing prerequisite artifacts) and 2 on numerical failures (solver
instability, training divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as config_mod
from .checkpoint import CheckpointError, load_checkpoint
from .composition import COMPOSITIONS, ScnoModel, assemble_scno
from .dataset import DatasetError, generate_dataset, read_dataset
from .evaluator import (METHODS, ForgettingError, ReportGapError, continual_experiment,
                        evaluate, isolation_experiment, read_results_csv, spike_ratio,
                        table2_report, write_phase_table, write_results_csv)
from .models import OP_FAMILY, OPERATORS, BlockLibrary
from .pde import COUPLED, FAMILIES
from .trainer import train_aggregator, train_baseline, train_block, train_correction

log = logging.getLogger("scno")

METHOD_ALIASES = {"scno": "SCNO", "scno+corr": "SCNO+Corr", "scno_corr": "SCNO+Corr",
                  "mono": "MonoSNN", "monosnn": "MonoSNN", "ann": "ANN"}


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path: Path, command: str):
        super().__init__(f"missing {path}; produce it with: {command}")
        self.path = path
        self.command = command


class Workspace:
    """Resolves artifact paths under ``root`` for a resolved config."""

    def __init__(self, cfg: dict, root="."):
        self.cfg = cfg
        self.root = Path(root)
        self.profile_flag = f" --profile {cfg['profile']}"

    def _dir(self, key: str) -> Path:
        p = Path(self.cfg["paths"][key])
        return p if p.is_absolute() else self.root / p

    def data_dir(self, family: str) -> Path:
        return self._dir("data") / family

    def ckpt_dir(self, seed: int) -> Path:
        return self._dir("checkpoints") / f"seed{seed}"

    def report_dir(self, seed: int | None = None) -> Path:
        base = self._dir("reports")
        return base if seed is None else base / f"seed{seed}"

    def _hint(self, command: str) -> str:
        return f"scno {command}{self.profile_flag}"

    def dataset(self, family: str, split: str):
        path = self.data_dir(family) / f"{split}.scno"
        if not path.exists():
            raise MissingArtifactError(path, self._hint(f"gen-data --family {family}"))
        return read_dataset(path)

    def pair(self, family: str):
        return self.dataset(family, "train"), self.dataset(family, "test")

    def block_path(self, op: str, seed: int, ablated: bool = False) -> Path:
        return self.ckpt_dir(seed) / f"block_{op}{'_ablated' if ablated else ''}.ckpt"

    def stage_path(self, kind: str, family: str, seed: int) -> Path:
        return self.ckpt_dir(seed) / f"{kind}_{family}.ckpt"

    def _load(self, path: Path, kind, command: str):
        if not path.exists():
            raise MissingArtifactError(path, self._hint(command))
        return load_checkpoint(path, kind)

    def block(self, op: str, seed: int, ablated: bool = False):
        cmd = f"train-block --op {op} --seed {seed}" + (" --ablate" if ablated else "")
        return self._load(self.block_path(op, seed, ablated), "block", cmd)

    def library(self, seed: int, tags=OPERATORS) -> BlockLibrary:
        lib = BlockLibrary()
        for op in tags:
            lib.add_block(op, self.block(op, seed))
        return lib

    def scno(self, family: str, seed: int, correction: bool = False) -> ScnoModel:
        tags = COMPOSITIONS[family]
        lib = self.library(seed, tags)
        agg = self._load(self.stage_path("aggregator", family, seed), "aggregator",
                         f"train-aggregator --pde {family} --seed {seed}")
        corr = None
        if correction:
            corr = self._load(self.stage_path("correction", family, seed), "correction",
                              f"train-correction --pde {family} --seed {seed}")
        return assemble_scno(lib, tags, agg, corr, family=family)

    def baseline(self, kind: str, family: str, seed: int):
        return self._load(self.stage_path(kind, family, seed), kind,
                          f"train-baseline --kind {kind} --pde {family} --seed {seed}")

    def model_for(self, method: str, family: str, seed: int):
        if method == "SCNO":
            return self.scno(family, seed)
        if method == "SCNO+Corr":
            return self.scno(family, seed, correction=True)
        return self.baseline("mono" if method == "MonoSNN" else "ann", family, seed)

    def eval_path(self, family: str, method: str, seed: int) -> Path:
        safe = method.replace("+", "_").lower()
        return self.report_dir(seed) / f"eval_{family}_{safe}.csv"


# -- stage runners (also used by the pipeline) ---------------------------------

def _echo(ws: Workspace, *dirs: Path) -> None:
    for d in dirs:
        config_mod.echo(ws.cfg, d)


def run_gen_data(ws: Workspace, family: str, force: bool = False) -> None:
    out = ws.data_dir(family)
    if not force and (out / "train.scno").exists() and (out / "test.scno").exists():
        return
    d = ws.cfg["data"]
    log.info("generating %s (%d train / %d test)", family, d["n_train"], d["n_test"])
    generate_dataset(config_mod.family(ws.cfg, family), d["n_train"], d["n_test"], d["seed"],
                     out, config_mod.grid(ws.cfg))
    _echo(ws, out)


def run_train_block(ws: Workspace, op: str, seed: int, ablate: bool = False,
                    force: bool = False) -> Path:
    path = ws.block_path(op, seed, ablate)
    if path.exists() and not force:
        return path
    train, test = ws.pair(OP_FAMILY[op])
    cfg = config_mod.train_config(ws.cfg, "block", seed)
    _, rec = train_block(op, train, test, cfg, out=path, ablate=ablate,
                         **config_mod.block_train_kwargs(ws.cfg, op))
    log.info("block %s%s: test rel L2 %.4f (%.0fs)", op, " (ablated)" if ablate else "",
             rec.final_test, rec.wall_time)
    _echo(ws, path.parent)
    return path


def run_train_aggregator(ws: Workspace, family: str, seed: int, force: bool = False) -> Path:
    path = ws.stage_path("aggregator", family, seed)
    if path.exists() and not force:
        return path
    lib = ws.library(seed, COMPOSITIONS[family])
    train, test = ws.pair(family)
    cfg = config_mod.train_config(ws.cfg, "aggregator", seed)
    _, rec = train_aggregator(lib, family, train, test, cfg, out=path, **ws.cfg["aggregator"])
    log.info("aggregator %s: test rel L2 %.4f (%.0fs)", family, rec.final_test, rec.wall_time)
    _echo(ws, path.parent)
    return path


def run_train_correction(ws: Workspace, family: str, seed: int, force: bool = False) -> Path:
    path = ws.stage_path("correction", family, seed)
    if path.exists() and not force:
        return path
    model = ws.scno(family, seed)
    train, test = ws.pair(family)
    cfg = config_mod.train_config(ws.cfg, "correction", seed)
    _, rec = train_correction(model, train, test, cfg, out=path, **ws.cfg["correction"])
    log.info("correction %s: test rel L2 %.4f (%.0fs)", family, rec.final_test, rec.wall_time)
    _echo(ws, path.parent)
    return path


def run_train_baseline(ws: Workspace, kind: str, family: str, seed: int,
                       force: bool = False) -> Path:
    path = ws.stage_path(kind, family, seed)
    if path.exists() and not force:
        return path
    train, test = ws.pair(family)
    cfg = config_mod.train_config(ws.cfg, "baseline", seed)
    arch = (config_mod.ann_overrides(ws.cfg) if kind == "ann"
            else config_mod.arch_overrides(ws.cfg, "mono"))
    _, rec = train_baseline(kind, train, test, cfg, out=path, **arch)
    log.info("%s %s: test rel L2 %.4f (%.0fs)", kind, family, rec.final_test, rec.wall_time)
    _echo(ws, path.parent)
    return path


def run_eval(ws: Workspace, family: str, method: str, seed: int) -> Path:
    model = ws.model_for(method, family, seed)
    result = evaluate(model, ws.dataset(family, "test"), method, seed)
    path = write_results_csv([result], ws.eval_path(family, method, seed))
    _echo(ws, path.parent)
    log.info("%s %s seed %d: rel L2 %.4f, %.0f spikes/inference", family, method, seed,
             result.rel_l2, result.spikes_per_inference)
    return path


def run_continual(ws: Workspace, seed: int, reuse: bool = False) -> Path:
    data = {op: ws.pair(OP_FAMILY[op]) for op in OPERATORS}
    blocks = {op: ws.block(op, seed) for op in OPERATORS} if reuse else None
    cfg = config_mod.train_config(ws.cfg, "block", seed)
    arch = {op: config_mod.block_train_kwargs(ws.cfg, op) for op in OPERATORS}
    rows = continual_experiment(data, seed, cfg, blocks, arch)
    path = write_phase_table(rows, ws.report_dir(seed) / "continual.csv")
    _echo(ws, path.parent)
    return path


def run_isolation(ws: Workspace, seed: int, shared: bool = False, out: Path | None = None) -> Path:
    rd = ws.scno("react_diff", seed)
    lib = rd._library
    for op in COMPOSITIONS["burgers"]:
        if op not in lib:
            lib.add_block(op, ws.block(op, seed))
    rd_test = ws.dataset("react_diff", "test")
    b_train, b_test = ws.pair("burgers")
    cfg = config_mod.train_config(ws.cfg, "aggregator", seed)
    res = isolation_experiment(lib, rd, rd_test, b_train, b_test, cfg, seed, shared, out=out,
                               aggregator_arch=ws.cfg["aggregator"])
    name = "isolation_shared.csv" if shared else "isolation.csv"
    path = ws.report_dir(seed) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "shared", "error_before", "error_after", "delta"])
        w.writerow([seed, shared, repr(res.error_before), repr(res.error_after), repr(res.delta)])
    _echo(ws, path.parent)
    log.info("isolation: react-diff error %.6g -> %.6g (delta %.3g)", res.error_before,
             res.error_after, res.delta)
    return path


def collect_results(ws: Workspace) -> list:
    results = []
    for seed in ws.cfg["seeds"]:
        for family in COUPLED:
            for method in METHODS:
                path = ws.eval_path(family, method, seed)
                if path.exists():
                    results.extend(read_results_csv(path))
    return results


def run_report(ws: Workspace, strict: bool = False) -> Path:
    path = ws.report_dir() / "table2.csv"
    try:
        table2_report(collect_results(ws), path, strict=strict)
    finally:
        _echo(ws, path.parent)
    return path


def run_pipeline_seed(cfg: dict, root: str, seed: int) -> None:
    """Every training and evaluation stage for one seed, skipping finished artifacts."""
    ws = Workspace(cfg, root)
    for op in OPERATORS:
        run_train_block(ws, op, seed)
    for op in ("conv", "diff"):
        run_train_block(ws, op, seed, ablate=True)
    run_train_aggregator(ws, "react_diff", seed)
    burgers = ws.stage_path("aggregator", "burgers", seed)
    if not burgers.exists():
        run_isolation(ws, seed, out=burgers)
    for family in COUPLED:
        run_train_aggregator(ws, family, seed)
        run_train_correction(ws, family, seed)
        for kind in ("mono", "ann"):
            run_train_baseline(ws, kind, family, seed)
        for method in METHODS:
            if not ws.eval_path(family, method, seed).exists():
                run_eval(ws, family, method, seed)
    if not (ws.report_dir(seed) / "continual.csv").exists():
        run_continual(ws, seed, reuse=True)


def run_pipeline(cfg: dict, root=".", jobs: int = 1, strict: bool = False) -> Path:
    ws = Workspace(cfg, root)
    for family in FAMILIES:
        run_gen_data(ws, family)
    seeds = list(cfg["seeds"])
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for f in [pool.submit(run_pipeline_seed, cfg, str(root), s) for s in seeds]:
                f.result()
    else:
        for s in seeds:
            run_pipeline_seed(cfg, str(root), s)
    return run_report(ws, strict=strict)


# -- argument parsing ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _family_arg(allowed):
    def parse(value: str) -> str:
        if value not in allowed:
            raise argparse.ArgumentTypeError(
                f"unknown family {value!r}; valid: {', '.join(allowed)}")
        return value
    return parse


def _method_arg(value: str) -> str:
    if value in METHODS:
        return value
    key = value.lower()
    if key not in METHOD_ALIASES:
        raise argparse.ArgumentTypeError(
            f"unknown method {value!r}; valid: {', '.join(METHODS)}")
    return METHOD_ALIASES[key]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML config file (unknown keys are rejected)")
    common.add_argument("--profile", choices=config_mod.PROFILES, help="scale profile")
    common.add_argument("--root", default=".", help="base directory for relative paths")
    common.add_argument("--seed", type=int, help="run seed (default: every configured seed)")
    common.add_argument("--force", action="store_true", help="redo finished artifacts")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="scno", description="Spiking compositional neural operators.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="generate a dataset")
    g.add_argument("--family", required=True, type=_family_arg(FAMILIES + ("all",)))

    b = sub.add_parser("train-block", parents=[common], help="train and freeze a block")
    b.add_argument("--op", required=True, choices=OPERATORS)
    b.add_argument("--ablate", action="store_true",
                   help="disable skip connections and the learnable decay")

    for name, text in (("train-aggregator", "train an aggregator over frozen blocks"),
                       ("train-correction", "train a correction over a frozen SCNO")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--pde", required=True, type=_family_arg(COUPLED))

    bl = sub.add_parser("train-baseline", parents=[common], help="train an end-to-end baseline")
    bl.add_argument("--kind", required=True, choices=("mono", "ann"))
    bl.add_argument("--pde", required=True, type=_family_arg(COUPLED))

    e = sub.add_parser("eval", parents=[common], help="evaluate one method on one PDE")
    e.add_argument("--pde", required=True, type=_family_arg(COUPLED))
    e.add_argument("--method", required=True, type=_method_arg)

    c = sub.add_parser("continual", parents=[common], help="zero-forgetting phase table")
    c.add_argument("--reuse", action="store_true", help="use trained block checkpoints")

    i = sub.add_parser("isolation", parents=[common], help="aggregator isolation test")
    i.add_argument("--shared", action="store_true",
                   help="negative control: retrain the react-diff aggregator instance")

    r = sub.add_parser("report", parents=[common], help="aggregate evaluation CSVs")
    r.add_argument("--table2", action="store_true", required=True)
    r.add_argument("--strict", action="store_true", help="exit 1 on missing cells")

    sr = sub.add_parser("spike-ratio", parents=[common],
                        help="spikes of a two-block SCNO over the monolithic SNN")
    sr.add_argument("--pde", default="react_diff", type=_family_arg(COUPLED))

    pl = sub.add_parser("pipeline", parents=[common], help="every stage end to end")
    pl.add_argument("--jobs", type=int, help="parallel processes over seeds")
    pl.add_argument("--strict", action="store_true")

    sub.add_parser("show-config", parents=[common], help="print the resolved config")
    return p


def _seeds(cfg: dict, args) -> list[int]:
    return [args.seed] if args.seed is not None else list(cfg["seeds"])


def dispatch(args) -> int:
    cfg = config_mod.load(args.config, args.profile)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    ws = Workspace(cfg, args.root)
    seeds = _seeds(cfg, args)
    cmd = args.command
    if cmd == "show-config":
        print(config_mod.dump(cfg), end="")
    elif cmd == "gen-data":
        for fam in (FAMILIES if args.family == "all" else (args.family,)):
            run_gen_data(ws, fam, force=args.force)
    elif cmd == "train-block":
        for s in seeds:
            print(run_train_block(ws, args.op, s, args.ablate, force=args.force))
    elif cmd == "train-aggregator":
        for s in seeds:
            print(run_train_aggregator(ws, args.pde, s, force=args.force))
    elif cmd == "train-correction":
        for s in seeds:
            print(run_train_correction(ws, args.pde, s, force=args.force))
    elif cmd == "train-baseline":
        for s in seeds:
            print(run_train_baseline(ws, args.kind, args.pde, s, force=args.force))
    elif cmd == "eval":
        for s in seeds:
            print(run_eval(ws, args.pde, args.method, s))
    elif cmd == "continual":
        for s in seeds:
            print(run_continual(ws, s, reuse=args.reuse))
    elif cmd == "isolation":
        for s in seeds:
            print(run_isolation(ws, s, shared=args.shared))
    elif cmd == "report":
        path = run_report(ws, strict=args.strict or cfg["strict"])
        print(path.read_text(), end="")
    elif cmd == "spike-ratio":
        for s in seeds:
            ratio = spike_ratio(ws.scno(args.pde, s), ws.baseline("mono", args.pde, s),
                                ws.dataset(args.pde, "test"))
            print(json.dumps({"pde": args.pde, "seed": s, "spike_ratio": ratio}))
    elif cmd == "pipeline":
        path = run_pipeline(cfg, args.root, args.jobs or cfg["jobs"],
                            strict=args.strict or cfg["strict"])
        print(path.read_text(), end="")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ArithmeticError as exc:
        print(f"scno: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (config_mod.ConfigError, MissingArtifactError, DatasetError, CheckpointError,
            ReportGapError, ForgettingError, ValueError, KeyError) as exc:
        print(f"scno: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
