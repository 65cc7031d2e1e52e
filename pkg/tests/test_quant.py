import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dv, ds, is_tie, state
from quantsnn.quant import (
    QuantActLayer,
    expected_activation,
    make_rng,
    quantize_ratio,
    round_half_away,
    sample_noise,
)
from quantsnn.tensor import StateError


class TestSampleNoise:
    def test_open_interval(self):
        e = sample_noise(make_rng(0), (1000, 100))
        assert np.all(e > -0.5) and np.all(e < 0.5)

    def test_same_seed_same_stream(self):
        assert np.array_equal(sample_noise(make_rng(42), (50,)), sample_noise(make_rng(42), (50,)))

    def test_derived_streams_differ(self):
        assert not np.array_equal(sample_noise(make_rng(1, 0), (10,)), sample_noise(make_rng(1, 1), (10,)))

    def test_mean_monte_carlo(self):
        e = sample_noise(make_rng(3), 10**6)
        assert abs(e.mean()) <= 4 * (1 / math.sqrt(12)) / 10**3

    def test_redraws_exact_zero(self):
        class Stub:
            def __init__(self):
                self.calls = 0

            def random(self, shape):
                self.calls += 1
                out = np.full(shape, 0.25)
                if self.calls == 1:
                    out.flat[0] = 0.0
                return out

        e = sample_noise(Stub(), (3,))
        np.testing.assert_array_equal(e, [-0.25, -0.25, -0.25])


class TestRounding:
    @pytest.mark.parametrize("x,expected", [(0.5, 1), (1.5, 2), (2.5, 3), (-0.5, -1), (0.49999999999999994, 0),
                                            (1.4, 1), (2.6, 3)])
    def test_half_away(self, x, expected):
        assert round_half_away(np.array(x)) == expected

    def test_clip_then_round_equals_round_then_clip(self):
        y = np.arange(-200, 700) * 0.01 + 0.003
        for p in (1, 2, 3, 4):
            np.testing.assert_array_equal(quantize_ratio(y, p), np.clip(round_half_away(y), 0, p))


class TestQuantForward:
    @pytest.mark.parametrize("s,p,v,expected", [(1.0, 3, 1.4, 1.0), (1.0, 3, 5.0, 3.0), (0.5, 3, -0.7, 0.0)])
    def test_examples(self, s, p, v, expected):
        assert QuantActLayer(p, s).quant_forward(np.array([v]))[0] == expected

    def test_caches_ratio_and_zero_noise(self):
        layer = QuantActLayer(3, 0.5)
        layer.quant_forward(np.array([0.7, 1.1]))
        x, eps = layer.cache
        np.testing.assert_array_equal(x, [0.7 / 0.5, 1.1 / 0.5])
        assert not eps.any()

    @pytest.mark.parametrize("s", [0.0, -1.0, float("nan")])
    def test_invalid_scale(self, s):
        layer = QuantActLayer(2, 1.0)
        layer.s = s
        with pytest.raises(StateError):
            layer.quant_forward(np.ones(2))

    def test_p_must_be_positive_integer(self):
        with pytest.raises(ValueError):
            QuantActLayer(0)
        with pytest.raises(ValueError):
            QuantActLayer(1.5)

    def test_p_immutable(self):
        with pytest.raises(AttributeError):
            QuantActLayer(2).p = 3


class TestQuantBackward:
    def _grads(self, x, p, eps=0.0):
        layer = QuantActLayer(p, 1.0, noise_enabled=True)
        layer.cache = (np.array([x]), np.array([eps]))
        g = layer.backward(np.ones(1))
        return g[0], layer.grad_s

    def test_interior(self):
        g, gs = self._grads(1.4, 3)
        assert g == 1.0 and math.isclose(gs, -0.4, abs_tol=1e-15)

    def test_lower_branch(self):
        assert self._grads(-0.1, 3) == (0.0, 0.0)

    def test_upper_branch(self):
        assert self._grads(3.2, 3) == (0.0, 3.0)

    def test_backward_without_forward(self):
        with pytest.raises(StateError):
            QuantActLayer(2).backward(np.ones(1))

    def test_scale_gradient_accumulates_grad_out(self):
        layer = QuantActLayer(3, 1.0)
        layer.quant_forward(np.array([1.4, 3.5, -1.0]))
        layer.backward(np.array([2.0, 0.5, 7.0]))
        assert math.isclose(layer.grad_s, 2.0 * (-0.4) + 0.5 * 3, rel_tol=1e-12)


class TestNoiseAdaptor:
    def _forward_with(self, v, eps, s=1.0, p=3):
        class FixedRng:
            def random(self, shape):
                return np.full(shape, eps + 0.5)

        layer = QuantActLayer(p, s, noise_enabled=True)
        return layer, layer.na_forward(np.array([v]), FixedRng())[0]

    def test_round_up(self):
        assert self._forward_with(1.4, 0.2)[1] == 2.0

    def test_round_down(self):
        assert self._forward_with(1.4, -0.2)[1] == 1.0

    def test_backward_examples(self):
        layer, _ = self._forward_with(1.4, 0.2)
        assert layer.backward(np.ones(1))[0] == 1.0
        assert math.isclose(layer.grad_s, 0.4, abs_tol=1e-12)
        layer, _ = self._forward_with(-0.1, -0.2)
        assert layer.backward(np.ones(1))[0] == 0.0 and layer.grad_s == 0.0
        layer, _ = self._forward_with(2.75, 0.25)  # x + eps == 3.0 exactly
        assert layer.backward(np.ones(1))[0] == 0.0 and layer.grad_s == 3.0

    def test_noise_reused_in_backward(self):
        layer = QuantActLayer(3, 1.0, noise_enabled=True)
        rng = make_rng(9)
        v = make_rng(1).uniform(0, 3, 500)
        layer.na_forward(v, rng)
        x, eps = layer.cache
        y = x + eps
        g = layer.backward(np.ones_like(v))
        np.testing.assert_array_equal(g, [dv(t, 3) for t in y])

    def test_requires_enabled_flag(self):
        with pytest.raises(StateError):
            QuantActLayer(2).na_forward(np.ones(1), make_rng(0))

    def test_monte_carlo_mean(self):
        layer = QuantActLayer(3, 1.0, noise_enabled=True)
        n = 10**5
        m = layer.na_forward(np.full(n, 1.4), make_rng(5)).mean()
        assert abs(m - 1.4) <= 4 * 0.5 / math.sqrt(n)

    def test_expected_activation(self):
        layer = QuantActLayer(3, 1.0)
        np.testing.assert_array_equal(layer.expected_activation(np.array([1.4, 9.0, -2.0])), [1.4, 3.0, 0.0])

    def test_expected_activation_grid_monte_carlo(self):
        s, p, n = 1.0, 3, 20000
        v = np.linspace(0, 3, 31)
        layer = QuantActLayer(p, s, noise_enabled=True)
        mean = layer.na_forward(np.broadcast_to(v, (n, v.size)), make_rng(17)).mean(axis=0)
        assert np.all(np.abs(mean - expected_activation(v, s, p)) <= 4 * 0.5 * s / math.sqrt(n))

    @pytest.mark.parametrize("k,f", [(0, 0.1), (1, 0.37), (2, 0.5), (2, 0.93)])
    def test_transition_probability(self, k, f):
        n, s, p = 10**5, 0.8, 3
        layer = QuantActLayer(p, s, noise_enabled=True)
        out = layer.na_forward(np.full(n, (k + f) * s), make_rng(k, int(f * 100)))
        up = np.mean(np.isclose(out / s, k + 1))
        assert abs(up - f) <= 4 * math.sqrt(f * (1 - f) / n)

    @settings(max_examples=300, deadline=None)
    @given(v=st.floats(-10, 10), eps=st.floats(-0.4999999, 0.4999999),
           s=st.floats(0.05, 4.0), p=st.integers(1, 6))
    def test_bounded_transition(self, v, eps, s, p):
        det = QuantActLayer(p, s).quant_forward(np.array([v]))[0]
        layer = QuantActLayer(p, s, noise_enabled=True)

        class FixedRng:
            def random(self, shape):
                return np.full(shape, eps + 0.5)

        noisy = layer.na_forward(np.array([v]), FixedRng())[0]
        jump = abs(noisy - det) / s
        assert math.isclose(jump, 0.0, abs_tol=1e-9) or math.isclose(jump, 1.0, rel_tol=1e-9)


class TestClosedFormGrid:
    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    @pytest.mark.parametrize("s", [1.0, 0.37])
    def test_matches_piecewise_rules(self, p, s):
        grid = np.arange(-100, 100 * (p + 1) + 1) / 100.0
        for e in (-0.49, -0.25, 0.0, 0.25, 0.49):
            layer = QuantActLayer(p, s, noise_enabled=True)
            x = (grid * s) / s
            layer.cache = (x, np.full_like(x, e))
            y = x + e
            fwd = s * quantize_ratio(y, p)
            g = layer.backward(np.ones_like(x))
            for i, yi in enumerate(y):
                if is_tie(yi):
                    continue
                assert fwd[i] == s * float(state(yi, p))
                assert g[i] == dv(yi, p)
                one = QuantActLayer(p, s, noise_enabled=True)
                one.cache = (x[i:i + 1], np.array([e]))
                one.backward(np.ones(1))
                assert one.grad_s == ds(yi, p)


def test_noise_disabled_paths_identical():
    v = make_rng(2).normal(0, 2, 300)
    a = QuantActLayer(3, 0.6)
    a.training = True
    b = QuantActLayer(3, 0.6, noise_enabled=True)
    out_a = a.forward(v, make_rng(0))
    ga = a.backward(np.ones_like(v))
    b.cache = (v / 0.6, np.zeros_like(v))
    gb = b.backward(np.ones_like(v))
    np.testing.assert_array_equal(out_a, b.apply(v))
    np.testing.assert_array_equal(ga, gb)
    assert a.grad_s == b.grad_s


def test_evaluation_is_deterministic_even_with_noise_enabled():
    layer = QuantActLayer(2, 0.5, noise_enabled=True)
    v = np.linspace(-1, 2, 50)
    np.testing.assert_array_equal(layer.forward(v), layer.quant_forward(v))


def test_scale_initialised_from_first_training_batch():
    layer = QuantActLayer(4, 1.0, initialized=False)
    layer.training = True
    v = np.array([[-2.0, 1.0], [3.0, 0.0]])
    layer.forward(v)
    assert layer.s == 2 * 1.5 / 2.0
    layer.forward(v * 10)
    assert layer.s == 1.5
