import csv

import pytest
import yaml

from scno.cli import main
from scno.config import RESOLVED_NAME
from scno.evaluator import GAP

QUICK = {"epochs": 2, "batch_size": 4, "eval_every": 1}
TINY_CONFIG = {
    "data": {"n_train": 8, "n_test": 4, "m": 16, "steps": 4},
    "block": {"hidden": 16, "latent": 8, "trunk_hidden": [16, 16],
              "steps": {"conv": 3, "diff": 2, "react": 2, "mono": 2}},
    "aggregator": {"context_hidden": 16, "context_dim": 4, "hidden": 16, "layers": 2},
    "correction": {"context_hidden": 16, "context_dim": 4, "hidden": 16, "layers": 2},
    "training": {stage: dict(QUICK) for stage in ("block", "aggregator", "correction",
                                                  "baseline")},
}


def write_config(path, extra=None):
    cfg = yaml.safe_load(yaml.safe_dump(TINY_CONFIG))
    for key, value in (extra or {}).items():
        cfg.setdefault(key, {}).update(value) if isinstance(value, dict) else cfg.update({key: value})
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture
def cfg_file(tmp_path):
    return write_config(tmp_path / "tiny.yaml")


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:  # argparse rejections
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


class TestValidation:
    def test_unknown_family(self, capsys, tmp_path):
        code, _, err = run(capsys, "gen-data", "--family", "kdv", "--root", str(tmp_path))
        assert code == 1
        for fam in ("convection", "diffusion", "reaction", "burgers", "neutron_diff"):
            assert fam in err

    def test_missing_checkpoint_names_command(self, capsys, tmp_path, cfg_file):
        assert run(capsys, "gen-data", "--family", "react_diff", "--config", cfg_file,
                   "--root", str(tmp_path))[0] == 0
        code, _, err = run(capsys, "eval", "--pde", "react_diff", "--method", "scno",
                           "--config", cfg_file, "--root", str(tmp_path))
        assert code == 1
        assert "scno train-block --op react --seed 0" in err

    def test_missing_aggregator_named(self, capsys, tmp_path, cfg_file):
        root = str(tmp_path)
        for fam in ("reaction", "diffusion"):
            run(capsys, "gen-data", "--family", fam, "--config", cfg_file, "--root", root)
        for op in ("react", "diff"):
            assert run(capsys, "train-block", "--op", op, "--config", cfg_file,
                       "--root", root)[0] == 0
        run(capsys, "gen-data", "--family", "react_diff", "--config", cfg_file, "--root", root)
        code, _, err = run(capsys, "eval", "--pde", "react_diff", "--method", "SCNO",
                           "--config", cfg_file, "--root", root)
        assert code == 1 and "scno train-aggregator --pde react_diff" in err

    def test_missing_dataset_named(self, capsys, tmp_path, cfg_file):
        code, _, err = run(capsys, "train-block", "--op", "conv", "--config", cfg_file,
                           "--root", str(tmp_path))
        assert code == 1 and "scno gen-data --family convection" in err

    def test_unknown_config_key(self, capsys, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("training:\n  block:\n    epochz: 3\n")
        code, _, err = run(capsys, "show-config", "--config", str(path))
        assert code == 1 and "training.block.epochz" in err

    def test_unknown_method(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", "--pde", "burgers", "--method", "fno")
        assert code == 1 and "SCNO" in err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exits_2(self, capsys, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", {"training": {
            "block": {**QUICK, "lr": 1e30}}})
        run(capsys, "gen-data", "--family", "diffusion", "--config", cfg, "--root", str(tmp_path))
        code, _, err = run(capsys, "train-block", "--op", "diff", "--config", cfg,
                           "--root", str(tmp_path))
        assert code == 2 and "numerical failure" in err


class TestConfig:
    def test_show_config_defaults(self, capsys):
        code, out, _ = run(capsys, "show-config", "--profile", "full")
        cfg = yaml.safe_load(out)
        assert code == 0
        assert cfg["seeds"] == [0, 1, 2] and cfg["data"]["n_train"] == 1500
        assert cfg["training"]["block"]["epochs"] == 800
        assert cfg["coefficients"]["D"] == 1.0 and cfg["coefficients"]["sigma_a"] == 0.1

    def test_desk_profile(self, capsys):
        cfg = yaml.safe_load(run(capsys, "show-config", "--profile", "desk")[1])
        assert cfg["data"]["n_train"] == 400 and cfg["training"]["block"]["epochs"] == 200
        assert cfg["seeds"] == [0]

    @pytest.mark.parametrize("name", ["desk", "full"])
    def test_bundled_configs_match_profiles(self, capsys, name):
        bundled = yaml.safe_load(run(capsys, "show-config", "--config", f"{name}.yaml")[1])
        assert bundled == yaml.safe_load(run(capsys, "show-config", "--profile", name)[1])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = write_config(root / "tiny.yaml")
    code = main(["pipeline", "--config", cfg, "--root", str(root), "--strict"])
    return root, cfg, code


class TestPipeline:
    def test_all_cells_populated(self, pipeline):
        root, _, code = pipeline
        assert code == 0
        rows = list(csv.reader(open(root / "reports" / "table2.csv")))
        assert len(rows) == 7
        cells = [c for row in rows[1:6] for c in row[1:]]
        assert len(cells) == 20 and GAP not in cells

    def test_resolved_config_everywhere(self, pipeline):
        root, _, _ = pipeline
        dirs = [root / "reports", root / "reports" / "seed0", root / "checkpoints" / "seed0"]
        dirs += [d for d in (root / "data").iterdir() if d.is_dir()]
        for d in dirs:
            assert (d / RESOLVED_NAME).exists(), d

    def test_experiment_tables(self, pipeline):
        root, _, _ = pipeline
        rows = list(csv.reader(open(root / "reports" / "seed0" / "continual.csv")))
        assert len(rows) == 7
        iso = list(csv.DictReader(open(root / "reports" / "seed0" / "isolation.csv")))
        assert float(iso[0]["delta"]) == 0.0

    def test_eval_byte_reproducible(self, pipeline, capsys):
        root, cfg, _ = pipeline
        path = root / "reports" / "seed0" / "eval_burgers_scno_corr.csv"
        before = path.read_bytes()
        assert run(capsys, "eval", "--pde", "burgers", "--method", "SCNO+Corr", "--config", cfg,
                   "--root", str(root))[0] == 0
        assert path.read_bytes() == before

    def test_spike_ratio_command(self, pipeline, capsys):
        root, cfg, _ = pipeline
        code, out, _ = run(capsys, "spike-ratio", "--config", cfg, "--root", str(root))
        assert code == 0 and '"spike_ratio"' in out

    def test_report_strict_missing(self, capsys, tmp_path, cfg_file):
        code, _, err = run(capsys, "report", "--table2", "--strict", "--config", cfg_file,
                           "--root", str(tmp_path))
        assert code == 1 and "missing table cells" in err
