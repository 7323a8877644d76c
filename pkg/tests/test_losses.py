import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from downscale_uq.errors import ConfigError, NonFiniteError, ShapeMismatchError
from downscale_uq.models import (
    QuantileLevels,
    kl_divergence,
    mse,
    pinball_loss,
    reparameterize,
    vnn_loss,
)
from downscale_uq.numerics import Tensor, backward, grad_check, tmean


def pin(y, q, tau):
    return pinball_loss(np.full((1, 1, 1), y), np.full((1, 1, 1, 1), q), [tau]).item()


class TestPinball:
    @pytest.mark.parametrize("y,q,tau,expected", [
        (2.0, 0.0, 0.5, 1.0), (1.0, 0.0, 0.9, 0.9), (0.0, 1.0, 0.1, 0.9),
    ])
    def test_examples(self, y, q, tau, expected):
        assert pin(y, q, tau) == pytest.approx(expected, abs=1e-15)

    def test_identity_zero(self):
        y = np.random.default_rng(0).normal(size=(3, 4, 5))
        q = np.repeat(y[:, None], 10, axis=1)
        assert pinball_loss(y, q).item() == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_median_is_half_mae(self, seed):
        rng = np.random.default_rng(seed)
        y, q = rng.normal(size=(2, 4, 3, 5))
        got = pinball_loss(y, q[:, None], [0.5]).item()
        assert abs(got - 0.5 * np.mean(np.abs(y - q))) < 1e-12

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        assert pinball_loss(rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 10, 3, 3))).item() >= 0

    def test_levels_validation(self):
        with pytest.raises(ConfigError):
            QuantileLevels((0.0, 0.5))
        with pytest.raises(ConfigError):
            QuantileLevels((0.5, 0.4))
        with pytest.raises(ConfigError):
            pinball_loss(np.zeros((1, 2, 2)), np.zeros((1, 1, 2, 2)), [1.2])

    def test_default_levels(self):
        assert QuantileLevels().levels == (0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            pinball_loss(np.zeros((1, 2, 2)), np.zeros((1, 3, 2, 2)))

    def test_gradient_away_from_kink(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=(2, 3, 3))
        q0 = y[:, None] + rng.choice([-1, 1], size=(2, 10, 3, 3)) * rng.uniform(0.1, 1.0, (2, 10, 3, 3))
        assert grad_check(lambda q: pinball_loss(y, q), q0, 1e-6) < 1e-5


class TestKL:
    def test_prior(self):
        assert kl_divergence(np.zeros((1, 3)), np.zeros((1, 3))).data.tolist() == [0.0]

    def test_unit_mean(self):
        assert kl_divergence(np.ones((1, 1)), np.zeros((1, 1))).data[0] == pytest.approx(0.5)

    def test_variance_four(self):
        got = kl_divergence(np.zeros((1, 1)), np.full((1, 1), np.log(4.0))).data[0]
        assert got == pytest.approx(0.8068528, abs=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        assert np.all(kl_divergence(rng.normal(size=(3, 4)), rng.normal(size=(3, 4))).data >= -1e-15)

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            kl_divergence(np.array([[np.inf]]), np.zeros((1, 1)))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        lv = rng.normal(size=(2, 4))
        assert grad_check(lambda mu: tmean(kl_divergence(mu, Tensor(lv))), rng.normal(size=(2, 4))) < 1e-6
        mu = rng.normal(size=(2, 4))
        assert grad_check(lambda v: tmean(kl_divergence(Tensor(mu), v)), lv) < 1e-6


class TestReparameterize:
    def test_zero_eps(self):
        mu = np.array([[1.0, -2.0]])
        z = reparameterize(mu, np.array([[0.3, 1.0]]), np.zeros((1, 2)))
        assert np.array_equal(z.data, mu)

    def test_collapsed_variance(self):
        mu = np.array([[1.0, -2.0]])
        z = reparameterize(mu, np.full((1, 2), -np.inf), np.ones((1, 2)))
        assert np.array_equal(z.data, mu)

    def test_gradient_wrt_mu(self):
        mu = Tensor(np.zeros((2, 3)), requires_grad=True)
        backward(tmean(reparameterize(mu, np.zeros((2, 3)), np.ones((2, 3)))))
        np.testing.assert_allclose(mu.grad * mu.data.size, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            reparameterize(np.zeros(2), np.zeros(3), np.zeros(2))


class TestVnnLoss:
    def test_zero(self):
        y = np.ones((2, 3, 3))
        assert vnn_loss(y, y, np.zeros((2, 4)), np.zeros((2, 4)), 1.0).item() == 0.0

    def test_beta_zero_is_mse(self):
        rng = np.random.default_rng(4)
        y, yh = rng.normal(size=(2, 3, 3, 3))
        mu = rng.normal(size=(3, 2))
        assert vnn_loss(y, yh, mu, mu, 0.0).item() == mse(y, yh).item()

    def test_hand_value(self):
        y = np.ones((3, 2, 2))
        got = vnn_loss(y, np.zeros_like(y), np.ones((3, 1)), np.zeros((3, 1)), 2.0).item()
        assert got == pytest.approx(2.0, abs=1e-15)

    def test_negative_beta(self):
        with pytest.raises(ConfigError):
            vnn_loss(np.ones(2), np.ones(2), np.zeros((1, 1)), np.zeros((1, 1)), -1.0)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=(2, 3, 3))
        assert grad_check(lambda yh: mse(y, yh), rng.normal(size=(2, 3, 3))) < 1e-6
