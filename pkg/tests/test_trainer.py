import csv

import numpy as np
import pytest

import scno.trainer as T
from scno.autodiff import ops
from scno.autodiff.module import Linear
from scno.autodiff.tensor import Tensor
from scno.composition import Aggregator, FrozenComponentError, assemble_scno
from scno.dataset import Dataset, make_samples
from scno.models import BlockLibrary, make_block
from scno.pde import GridSpec, PdeFamily, solve_pde
from scno.trainer import (TrainConfig, TrainingDivergedError, TrainRecord, fit, stage_config,
                          train_aggregator, train_baseline, train_block, train_correction)

M = 16
GRID = GridSpec(m=M, steps=4)
TINY = dict(m=M, hidden=16, latent=8, trunk_hidden=(16, 16))
AGG = dict(context_hidden=16, context_dim=4, hidden=16, layers=2)
CORR = dict(context_hidden=16, context_dim=4, hidden=16, layers=2)
QUICK = dict(epochs=3, batch_size=8, eval_every=1)


def data(tag, n=16, split="train"):
    return make_samples(PdeFamily(tag), n, 0, split, GRID)


def snapshot(module):
    return {name: p.data.tobytes() for name, p in module.named_parameters()}


def changed(before, after):
    return {k for k in before if before[k] != after[k]}


@pytest.fixture(scope="module")
def library():
    lib = BlockLibrary()
    for op, fam in (("react", "reaction"), ("diff", "diffusion")):
        block, _ = train_block(op, data(fam), None, stage_config("block", **QUICK), **TINY)
        lib.add_block(op, block)
    return lib


@pytest.fixture(scope="module")
def rd():
    return data("react_diff"), data("react_diff", 8, "test")


class TestConfig:
    def test_stage_defaults(self):
        assert stage_config("block").epochs == 800
        assert stage_config("baseline").schedule == "plateau"
        agg = stage_config("aggregator")
        assert (agg.epochs, agg.schedule, agg.lr_floor) == (300, "cosine", 1e-5)
        assert stage_config("correction").epochs == 300
        full = stage_config("block")
        assert (full.batch_size, full.lr, full.weight_decay) == (64, 1e-3, 1e-4)
        assert (full.plateau_factor, full.patience, full.milestones) == (0.5, 30, (400, 600))

    def test_desk_profile(self):
        desk = stage_config("block", "desk")
        assert desk.epochs == 200 and desk.milestones == (100, 150)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(schedule="step")
        with pytest.raises(ValueError):
            stage_config("warmup")


class TestIdentityOracle:
    def test_identity_operator(self):
        """32 samples of ``uT = u0``, 50 epochs, relative L2 below 0.05."""
        src = make_samples(PdeFamily("convection"), 32, 0, "train", GRID)
        ident = Dataset(src.family, src.grid, src.u0, src.u0.copy(), "train", 0)
        cfg = stage_config("block", epochs=50, batch_size=8, schedule="cosine", eval_every=10)
        _, rec = train_block("conv", ident, ident, cfg, m=M, augment=False)
        assert rec.final_test < 0.05


class TestAffineAugment:
    def test_keep_one_is_identity(self, rng):
        x, y = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
        a, b = T.AffineAugment(keep=1.0)(rng, x, y)
        np.testing.assert_array_equal(a, x)
        np.testing.assert_array_equal(b, y)

    def test_same_map_on_input_and_target(self, rng):
        x = rng.normal(size=(64, 8))
        a, b = T.AffineAugment(keep=0.0)(rng, x, x.copy())
        np.testing.assert_allclose(a, b)
        s = np.ptp(a, axis=1) / np.ptp(x, axis=1)
        assert np.all((s >= 0.4 - 1e-12) & (s <= 1.0 + 1e-12))

    def test_diffusion_solver_commutes(self):
        # the property that makes the augmentation exact for the diff block
        data = make_samples(PdeFamily("diffusion"), 4, 0, "train", GRID)
        shifted = solve_pde(PdeFamily("diffusion"), 0.5 * data.u0 + 0.3, GRID)
        np.testing.assert_allclose(shifted, 0.5 * data.uT + 0.3, atol=1e-5)

    def test_refused_for_reaction(self):
        data = make_samples(PdeFamily("reaction"), 8, 0, "train", GRID)
        with pytest.raises(ValueError, match="not exact"):
            train_block("react", data, None, stage_config("block", epochs=1), m=M, augment=True)

    def test_default_on_for_affine_operators(self, monkeypatch):
        seen = {}
        real = T._operator_fit

        def spy(model, train, test, cfg, record, augment=None):
            seen[model.tag] = augment
            return real(model, train, test, cfg, record, augment)

        monkeypatch.setattr(T, "_operator_fit", spy)
        cfg = stage_config("block", epochs=1, batch_size=8)
        for op, fam in (("diff", "diffusion"), ("react", "reaction")):
            data = make_samples(PdeFamily(fam), 8, 0, "train", GRID)
            train_block(op, data, None, cfg, m=M)
        assert isinstance(seen["diff"], T.AffineAugment)
        assert seen["react"] is None


class TestRecord:
    def test_monotone_epochs(self):
        rec = TrainRecord("block", "x")
        rec.log_epoch(0, 1.0, 1e-3, None)
        with pytest.raises(ValueError):
            rec.log_epoch(0, 1.0, 1e-3, None)

    def test_csv(self, tmp_path):
        rec = TrainRecord("block", "x")
        rec.log_epoch(0, 0.5, 1e-3, 0.25)
        rec.log_epoch(1, 0.4, 1e-3, None)
        rows = list(csv.reader(open(rec.write_csv(tmp_path / "r.csv"))))
        assert rows == [["epoch", "loss", "test_rel_l2", "lr"], ["0", "0.5", "0.25", "0.001"],
                        ["1", "0.4", "", "0.001"]]
        assert rec.final_test == 0.25


class TestBlockStage:
    def test_all_parameters_move_then_freeze(self, tmp_path):
        train = data("convection")
        block0 = make_block("conv", np.random.default_rng([0, 0]), **TINY)
        before = snapshot(block0)
        block, rec = train_block("conv", train, train, stage_config("block", **QUICK),
                                 out=tmp_path / "b.ckpt", **TINY)
        after = snapshot(block)
        assert changed(before, after) == set(before)
        assert block.frozen and not block.training
        assert rec.digest and (tmp_path / "b.csv").exists()
        assert all(np.isfinite(rec.loss))

    def test_family_mismatch(self):
        with pytest.raises(ValueError, match="convection"):
            train_block("conv", data("diffusion", 4), None, stage_config("block", **QUICK))

    def test_ablation_pins_beta_and_skip(self):
        block, _ = train_block("diff", data("diffusion", 8), None,
                               stage_config("block", **QUICK), ablate=True, **TINY)
        names = {n for n, _ in block.named_parameters()}
        assert not any("decay" in n or "skip" in n for n in names)
        np.testing.assert_allclose(block.lif_layers[0].beta().data, 0.85, rtol=1e-6)

    def test_seed_reproducibility(self):
        train = data("reaction", 12)
        cfg = stage_config("block", **QUICK)
        _, a = train_block("react", train, None, cfg, **TINY)
        _, b = train_block("react", train, None, cfg, **TINY)
        assert a.loss == b.loss and a.digest == b.digest
        _, c = train_block("react", train, None, stage_config("block", **QUICK, seed=1), **TINY)
        assert c.loss != a.loss


class TestDownstreamStages:
    def test_aggregator_stage_discipline(self, library, rd, tmp_path):
        blocks_before = library.digests()
        model, rec = train_aggregator(library, "react_diff", rd[0], rd[1],
                                      stage_config("aggregator", **QUICK),
                                      out=tmp_path / "a.ckpt", **AGG)
        assert library.digests() == blocks_before
        assert model.aggregator.frozen
        fresh = Aggregator(("react", "diff"), M, np.random.default_rng([0, 304]), **AGG)
        assert changed(snapshot(fresh), snapshot(model.aggregator)) == set(snapshot(fresh))

    def test_correction_stage_discipline(self, library, rd):
        model, _ = train_aggregator(library, "react_diff", rd[0], None,
                                    stage_config("aggregator", **QUICK), **AGG)
        agg_before = model.aggregator.digest()
        blocks_before = library.digests()
        model, rec = train_correction(model, rd[0], rd[1], stage_config("correction", **QUICK),
                                      **CORR)
        assert model.aggregator.digest() == agg_before
        assert library.digests() == blocks_before
        assert float(model.correction.alpha.data) != pytest.approx(0.1, abs=0)
        assert all(not p.requires_grad for p in model.correction.parameters())

    def test_correction_alpha_starts_at_point_one(self, library, rd):
        model, _ = train_aggregator(library, "react_diff", rd[0], None,
                                    stage_config("aggregator", **QUICK), **AGG)
        seen = []
        orig = T.fit

        def spy(params, *a, **k):
            seen.append([p.data.copy() for p in params if p.ndim == 0])
            return orig(params, *a, **k)
        T.fit = spy
        try:
            train_correction(model, rd[0], None, stage_config("correction", epochs=1), **CORR)
        finally:
            T.fit = orig
        assert [float(a) for a in seen[0]] == [pytest.approx(0.1)]

    def test_correction_needs_frozen_aggregator(self, library, rd):
        agg = Aggregator(("react", "diff"), M, np.random.default_rng(0), **AGG)
        model = assemble_scno(library, ("react", "diff"), agg, family="react_diff")
        with pytest.raises(FrozenComponentError):
            train_correction(model, rd[0], None, stage_config("correction", **QUICK), **CORR)

    def test_unfrozen_block_refused(self, rd):
        lib = BlockLibrary()
        lib.add_block("react", make_block("react", np.random.default_rng(0), **TINY))
        lib.add_block("diff", make_block("diff", np.random.default_rng(1), **TINY))
        lib["diff"].readout.weight.requires_grad = True
        with pytest.raises(FrozenComponentError):
            train_aggregator(lib, "react_diff", rd[0], None,
                             stage_config("aggregator", **QUICK), **AGG)

    @pytest.mark.parametrize("kind", ["mono", "ann"])
    def test_baselines_train_end_to_end(self, kind, rd):
        model, rec = train_baseline(kind, rd[0], rd[1], stage_config("baseline", **QUICK),
                                    **TINY)
        assert model.frozen and np.isfinite(rec.final_test)
        assert len(rec.loss) == 3

    def test_unknown_baseline(self, rd):
        with pytest.raises(ValueError, match="mono, ann"):
            train_baseline("cnn", rd[0])


class TestFitLoop:
    def test_divergence_aborts(self, rng):
        lin = Linear(2, 1, rng)
        x = rng.normal(size=(8, 2)).astype(np.float32)

        def loss_fn(idx):
            return ops.mul(ops.mse_loss(lin(x[idx]), Tensor(np.zeros((len(idx), 1)))), np.inf)
        with pytest.raises(TrainingDivergedError, match="diverged at epoch 0"):
            fit(lin.parameters(), loss_fn, 8, TrainConfig(epochs=2, batch_size=4),
                TrainRecord("block", "lin"))

    def test_frozen_parameters_refused(self, rng):
        lin = Linear(2, 1, rng)
        for p in lin.parameters():
            p.requires_grad = False
        with pytest.raises(FrozenComponentError):
            fit(lin.parameters(), None, 4, TrainConfig(epochs=1, batch_size=2),
                TrainRecord("block", "lin"))

    def test_loss_decreases_on_linear_regression(self, rng):
        lin = Linear(3, 1, rng)
        x = rng.normal(size=(64, 3)).astype(np.float32)
        y = x @ np.array([[1.0], [-2.0], [0.5]], np.float32)
        rec = TrainRecord("block", "lin")
        fit(lin.parameters(), lambda i: ops.mse_loss(lin(x[i]), Tensor(y[i])), 64,
            TrainConfig(epochs=60, batch_size=16, lr=3e-2, schedule="cosine"), rec)
        assert rec.loss[-1] < 1e-2 * rec.loss[0]
