import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scno.autodiff import ops
from scno.autodiff.module import BatchNorm1d
from scno.autodiff.tensor import Tensor, default_dtype
from scno.spiking import LifLayer, SpikeStats, batchnorm_forward, logit, skip_combine


def brute_lif(current, beta, threshold, steps):
    """Scalar-loop LIF with soft reset: returns rate array and spike count."""
    b, n = current.shape
    rate = np.zeros((b, n))
    count = 0
    for i in range(b):
        for j in range(n):
            v, s, total = 0.0, 0.0, 0
            for _ in range(steps):
                v = beta[j] * v + current[i, j] - s * threshold
                s = 1.0 if v >= threshold else 0.0
                total += int(s)
            rate[i, j] = total / steps
            count += total
    return rate, count


def run_lif(current, beta, steps, threshold=1.0):
    with default_dtype(np.float64):
        rate, count = ops.lif(Tensor(np.asarray(current, np.float64)),
                              np.asarray(beta, np.float64), threshold, 25.0, steps)
    return rate.data, count


class TestLifExamples:
    def test_zero_current_is_silent(self):
        rate, count = run_lif(np.zeros((3, 5)), np.full(5, 0.85), 20)
        assert count == 0 and np.all(rate == 0)

    def test_zero_current_layer_without_batchnorm(self, rng):
        layer = LifLayer(4, 6, 10, rng, batchnorm=False, use_skip=False)
        layer.linear.weight.data[:] = 0
        layer.linear.bias.data[:] = 0
        out = layer(np.ones((2, 4), np.float32))
        assert layer.spikes == 0 and np.all(out.data == 0)

    @pytest.mark.parametrize("steps", [1, 5, 20, 30])
    def test_double_threshold_fires_every_step(self, steps):
        rate, count = run_lif(np.full((2, 3), 2.0), np.zeros(3), steps)
        assert np.all(rate == 1.0)
        assert count == 2 * 3 * steps

    def test_subthreshold_fixed_point(self):
        # v_t -> 0.1 / 0.15 = 0.667 < 1 for every horizon
        for steps in (1, 20, 200):
            rate, count = run_lif(np.full((1, 4), 0.1), np.full(4, 0.85), steps)
            assert count == 0

    def test_init_beta_and_gamma(self, rng):
        layer = LifLayer(3, 3, 5, rng)
        np.testing.assert_allclose(layer.beta().data, 0.85, rtol=1e-6)
        assert float(layer.gamma().data) == pytest.approx(0.5)

    def test_logit_inverts_sigmoid(self):
        assert 1 / (1 + np.exp(-logit(0.85))) == pytest.approx(0.85)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_current(self, rng):
        layer = LifLayer(2, 2, 5, rng, batchnorm=False)
        with pytest.raises(FloatingPointError):
            layer(np.array([[np.inf, 0.0], [0.0, 1.0]], np.float32))

    def test_frozen_decay_is_buffer(self, rng):
        layer = LifLayer(3, 3, 5, rng, learn_beta=False, use_skip=False)
        names = {n for n, _ in layer.named_parameters()}
        assert not any("decay" in n or "skip" in n for n in names)
        assert layer.gamma() == 0.0


class TestLifProperties:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)),
           arrays(np.float64, 4, elements=st.floats(0, 0.99)),
           st.integers(1, 12))
    def test_rate_bound_and_exact_accounting(self, current, beta, steps):
        rate, count = run_lif(current, beta, steps)
        assert np.all((rate >= 0) & (rate <= 1))
        ref_rate, ref_count = brute_lif(current, beta, 1.0, steps)
        assert count == ref_count
        np.testing.assert_array_equal(rate, ref_rate)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (2, 5), elements=st.floats(-3, 3)),
           arrays(np.float64, (2, 5), elements=st.floats(0, 3)),
           st.integers(1, 15))
    def test_monotone_drive_without_leak(self, current, extra, steps):
        lo, _ = run_lif(current, np.zeros(5), steps)
        hi, _ = run_lif(current + extra, np.zeros(5), steps)
        assert np.all(hi >= lo)

    def test_eval_determinism(self, rng):
        layer = LifLayer(8, 16, 20, rng)
        x = rng.normal(size=(10, 8)).astype(np.float32)
        layer(x)  # populate running stats
        layer.eval()
        layer.reset_spikes()
        a = layer(x).data.copy()
        ca = layer.spikes
        layer.reset_spikes()
        b = layer(x).data
        assert a.tobytes() == b.tobytes() and layer.spikes == ca

    def test_counter_accumulates(self, rng):
        layer = LifLayer(4, 4, 10, rng, batchnorm=False)
        x = 5 * np.ones((3, 4), np.float32)
        layer(x)
        first = layer.spikes
        layer(x)
        assert layer.spikes == 2 * first > 0


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.mark.usefixtures("f64")
class TestSkipCombine:
    def test_limits(self):
        rate = np.array([[0.2, 0.7]])
        x = np.array([[3.0, -1.0]])
        np.testing.assert_array_equal(skip_combine(rate, x, 0.0).data, rate)
        np.testing.assert_array_equal(skip_combine(rate, x, 1.0).data, x)

    def test_midpoint(self):
        assert skip_combine(np.ones((1, 1)), np.zeros((1, 1)), 0.5).data[0, 0] == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            skip_combine(np.ones((1, 2)), np.ones((1, 3)), 0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1), arrays(np.float64, 6, elements=st.floats(-10, 10)),
           arrays(np.float64, 6, elements=st.floats(-10, 10)))
    def test_convexity(self, g, a, b):
        out = skip_combine(a, b, g).data
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


@pytest.mark.usefixtures("f64")
class TestBatchNorm:
    def test_train_mode_normalises(self, rng):
        bn = BatchNorm1d(5)
        x = rng.normal(3.0, 2.0, size=(64, 5))
        out = batchnorm_forward(Tensor(x), bn, "train").data
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=0), 1, atol=1e-4)

    def test_running_stats_momentum(self, rng):
        bn = BatchNorm1d(3)
        x = rng.normal(size=(10, 3))
        batchnorm_forward(Tensor(x), bn, "train")
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))

    def test_eval_identity(self, rng):
        bn = BatchNorm1d(4)
        x = rng.normal(size=(3, 4))
        out = batchnorm_forward(Tensor(x), bn, "eval").data
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-12)
        np.testing.assert_allclose(out, x, rtol=1e-5)

    def test_constant_feature(self):
        bn = BatchNorm1d(2)
        bn.bias.data[:] = [0.3, -0.2]
        out = batchnorm_forward(Tensor(np.full((6, 2), 4.0)), bn, "train").data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, np.tile([0.3, -0.2], (6, 1)))

    def test_single_sample_train_rejected(self):
        bn = BatchNorm1d(2)
        with pytest.raises(ValueError, match="at least 2"):
            batchnorm_forward(Tensor(np.ones((1, 2))), bn, "train")

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            batchnorm_forward(Tensor(np.ones((2, 2))), BatchNorm1d(2), "infer")


class TestSpikeStats:
    def test_total_is_sum(self):
        s = SpikeStats([3, 4, 5], 2)
        assert s.total_spikes == 12 and s.spikes_per_sample == 6.0

    def test_empty(self):
        assert SpikeStats().spikes_per_sample == 0.0

    def test_merge(self):
        m = SpikeStats([1], 4).merge(SpikeStats([2, 3], 4))
        assert m.per_layer_spikes == [1, 2, 3] and m.samples_seen == 4
