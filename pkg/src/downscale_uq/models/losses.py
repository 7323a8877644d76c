"""Training objectives: pinball, reconstruction + KL, and the reparameterisation draw."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NonFiniteError, ShapeMismatchError
from ..numerics import Tensor, as_tensor, exp, relu

DEFAULT_LEVELS = tuple(round(0.05 + 0.1 * i, 2) for i in range(10))


@dataclass(frozen=True)
class QuantileLevels:
    levels: tuple[float, ...] = DEFAULT_LEVELS

    def __post_init__(self):
        lv = tuple(float(t) for t in self.levels)
        if not lv:
            raise ConfigError("at least one quantile level is required")
        if any(not (0.0 < t < 1.0) for t in lv):
            raise ConfigError("quantile levels must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigError("quantile levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    def __len__(self) -> int:
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.array(self.levels)


def _levels(levels) -> np.ndarray:
    if isinstance(levels, QuantileLevels):
        return levels.as_array()
    return QuantileLevels(tuple(np.atleast_1d(levels))).as_array()


def pinball_loss(y, q, levels=QuantileLevels()) -> Tensor:
    """Mean over samples, grid points and levels of rho_tau(y - q_tau).

    ``y`` is (N, H, W) or (N, 1, H, W); ``q`` is (N, P, H, W) with one channel
    per level.  rho_tau(u) = tau*relu(u) + (1 - tau)*relu(-u), which equals
    u*(tau - 1[u < 0]).
    """
    tau = _levels(levels)
    y, q = as_tensor(y), as_tensor(q)
    if y.ndim == q.ndim - 1:
        y = y.reshape(y.shape[0], 1, *y.shape[1:])
    if q.shape[1] != tau.size:
        raise ShapeMismatchError(f"{q.shape[1]} quantile channels for {tau.size} levels")
    if y.shape[0] != q.shape[0] or y.shape[2:] != q.shape[2:]:
        raise ShapeMismatchError("target and quantile shapes disagree")
    u = y - q
    t = tau.reshape(1, -1, *([1] * (q.ndim - 2)))
    return (relu(u) * t + relu(-u) * (1.0 - t)).mean()


def mse(y, yhat) -> Tensor:
    y, yhat = as_tensor(y), as_tensor(yhat)
    if y.shape != yhat.shape:
        raise ShapeMismatchError(f"shapes {y.shape} and {yhat.shape} differ")
    return ((y - yhat) ** 2).mean()


def kl_divergence(mu, logvar) -> Tensor:
    """Per-sample KL(N(mu, sigma^2) || N(0, I)) summed over the last axis."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeMismatchError("mu and logvar shapes differ")
    if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(logvar.data))):
        raise NonFiniteError("non-finite latent parameters")
    terms = logvar + 1.0 - mu * mu - exp(logvar)
    return terms.sum(axis=-1) * -0.5


def reparameterize(mu, logvar, eps) -> Tensor:
    """z = mu + exp(logvar / 2) * eps.  logvar = -inf gives z = mu."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise ShapeMismatchError("mu, logvar and eps must share a shape")
    if np.any(np.isnan(mu.data)) or np.any(np.isnan(logvar.data)) or not np.all(np.isfinite(eps)):
        raise NonFiniteError("non-finite reparameterisation input")
    return mu + exp(logvar * 0.5) * eps


def vnn_loss(y, yhat, mu, logvar, beta: float) -> Tensor:
    """Mean squared reconstruction error + beta * mean-over-samples KL."""
    if beta < 0:
        raise ConfigError("KL weight must be non-negative")
    recon = mse(y, yhat)
    if beta == 0:
        return recon
    return recon + kl_divergence(mu, logvar).mean() * beta
