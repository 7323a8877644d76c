import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from downscale_uq.errors import NonFiniteError, ShapeMismatchError
from downscale_uq.numerics import (
    AdamState,
    Tensor,
    adam_step,
    avg_pool2d,
    backward,
    concat,
    conv2d,
    exp,
    grad_check,
    log,
    matmul,
    relu,
    tanh,
    tmean,
    tsum,
    upsample_nearest2d,
)

from .oracles import adam_reference, central_difference, conv2d_loops


class TestBackward:
    def test_square(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        backward(x * x)
        assert x.grad == pytest.approx(6.0)

    def test_product(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = Tensor(np.array(5.0), requires_grad=True)
        backward(x * y)
        assert (x.grad, y.grad) == (5.0, 2.0)

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            backward(x * 2.0)

    def test_conv_relu_mean_vs_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 1, 4, 4))
        w = rng.normal(size=(2, 1, 3, 3))

        def f(a):
            return tmean(relu(conv2d(Tensor(a), Tensor(w))))

        xt = Tensor(x.copy(), requires_grad=True)
        backward(tmean(relu(conv2d(xt, Tensor(w)))))
        num = central_difference(lambda a: f(a).item(), x, 1e-4)
        rel = np.abs(xt.grad - num) / np.maximum(1.0, np.abs(num))
        assert rel.max() < 1e-4

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = x * x
        backward(tsum(y + y))
        np.testing.assert_allclose(x.grad, 4 * x.data)


class TestConv:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 3), st.integers(1, 3), st.integers(2, 6))
    def test_matches_loop_oracle(self, seed, c, o, h):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, c, h, h + 1))
        w = rng.normal(size=(o, c, 3, 3))
        b = rng.normal(size=o)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, conv2d_loops(x, w, b), atol=1e-12)

    def test_batch_independence(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        full = conv2d(Tensor(x), Tensor(w)).data
        single = conv2d(Tensor(x[2:3]), Tensor(w)).data
        assert np.array_equal(full[2:3], single)


def _smooth_ops(rng):
    """Scalar functions of a (2, 1, 4, 4) input exercising every differentiable op."""
    w = rng.normal(size=(2, 1, 3, 3)) * 0.5
    b = rng.normal(size=2)
    m = rng.normal(size=(16, 3))
    return [
        lambda t: tsum(t * t),
        lambda t: tmean(exp(t * 0.3)),
        lambda t: tsum(tanh(t)),
        lambda t: tsum(log(t * t + 1.0)),
        lambda t: tmean(conv2d(t, Tensor(w), Tensor(b)) ** 2),
        lambda t: tsum(avg_pool2d(t, 2) ** 3),
        lambda t: tsum(upsample_nearest2d(t, 2) * upsample_nearest2d(t, 2)),
        lambda t: tsum(matmul(t.reshape(2, 16), Tensor(m)) ** 2),
        lambda t: tsum(concat([t, t * 2.0], axis=1) ** 2),
        lambda t: tsum((t / (t * t + 2.0)).transpose(0, 1, 3, 2)[:, :, 1:3]),
    ]


def test_grad_check_random_configurations():
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng(100 + i)
        fns = _smooth_ops(rng)
        f = fns[i % len(fns)]
        x = rng.normal(size=(2, 1, 4, 4))
        worst = max(worst, grad_check(f, x, 1e-5))
    assert worst < 1e-4


class TestGradCheck:
    def test_sum_of_squares(self):
        x = np.random.default_rng(2).normal(size=(3, 4))
        assert grad_check(lambda t: tsum(t * t), x) < 1e-7

    def test_nan_input(self):
        with pytest.raises(NonFiniteError, match="non-finite evaluation"):
            grad_check(lambda t: tsum(t * t), np.array([np.nan, 1.0]))

    def test_bad_step(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: tsum(t), np.ones(2), step=0.0)


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        p = {"w": np.array([1.0, -2.0])}
        new, st_ = adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
        assert np.array_equal(new["w"], p["w"]) and st_.step == 1

    def test_first_step(self):
        new, _ = adam_step({"p": np.array(0.0)}, {"p": np.array(1.0)}, AdamState(lr=0.1))
        assert float(new["p"]) == pytest.approx(-0.1, abs=1e-8)

    def test_matches_reference_over_steps(self):
        rng = np.random.default_rng(3)
        p = rng.normal(size=5)
        params, state = {"p": p.copy()}, AdamState(lr=0.05)
        ref, m, v = p.copy(), 0.0, 0.0
        for step in range(1, 20):
            g = rng.normal(size=5)
            params, state = adam_step(params, {"p": g}, state)
            ref, m, v = adam_reference(ref, g, 0.05, step, m, v)
        np.testing.assert_allclose(params["p"], ref, rtol=1e-13)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(4)
            params, state = {"a": np.ones(3)}, AdamState(lr=0.01, weight_decay=0.1)
            for _ in range(10):
                params, state = adam_step(params, {"a": rng.normal(size=3)}, state)
            return params["a"]
        assert run().tobytes() == run().tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            adam_step({"a": np.ones(3)}, {"a": np.ones(2)}, AdamState())

    def test_inputs_untouched(self):
        p = {"a": np.ones(3)}
        adam_step(p, {"a": np.ones(3)}, AdamState())
        assert np.array_equal(p["a"], np.ones(3))
