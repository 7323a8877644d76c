"""Linear noise schedule, forward noising, and the reverse denoising updates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError
from ..numerics import Tensor
from .losses import mse

SAMPLERS = ("ddpm", "ddim")


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.2
    time_dim: int = 128
    sampler: str = "ddpm"
    ddim_steps: int = 20
    eta: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError("diffusion needs T >= 2")
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ConfigError("need 0 < beta_start < beta_end < 1")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}")
        if not (1 <= self.ddim_steps <= self.T):
            raise ConfigError("ddim_steps must lie in [1, T]")
        if self.eta < 0 or self.temperature < 0:
            raise ConfigError("eta and temperature must be non-negative")
        if self.time_dim <= 0 or self.time_dim % 2:
            raise ConfigError("time_dim must be a positive even number")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class Schedule:
    """beta_t and cumulative alpha_t for t = 1..T (index t-1 in the arrays)."""

    betas: np.ndarray
    alphas: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        """Cumulative product; alpha(0) = 1 by convention."""
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alphas[t - 1])

    def _check(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"diffusion step out of range [1, {self.T}]")


def make_beta_schedule(beta_start: float, beta_end: float, T: int) -> Schedule:
    if T < 2:
        raise ConfigError("diffusion needs T >= 2")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ConfigError("need 0 < beta_start < beta_end < 1")
    t = np.arange(1, T + 1)
    betas = beta_start + (t - 1) * (beta_end - beta_start) / (T - 1)
    alphas = np.cumprod(1.0 - betas)
    return Schedule(betas, alphas)


def diffuse_forward(y0: np.ndarray, t, eps: np.ndarray, schedule: Schedule) -> np.ndarray:
    """y_t = sqrt(alpha_t) y0 + sqrt(1 - alpha_t) eps.  ``t`` may be per-sample."""
    t = np.asarray(t)
    schedule._check(t)
    a = schedule.alphas[t - 1]
    if a.ndim:
        a = a.reshape(-1, *([1] * (np.ndim(y0) - 1)))
    return np.sqrt(a) * y0 + np.sqrt(1.0 - a) * eps


def denoise_step(y_t: np.ndarray, t: int, eps_hat: np.ndarray, noise: np.ndarray | None,
                 schedule: Schedule) -> np.ndarray:
    """Ancestral reverse update y_t -> y_{t-1}; the fresh noise is dropped at t = 1."""
    b = schedule.beta(t)
    a = schedule.alpha(t)
    out = (y_t - (b / np.sqrt(1.0 - a)) * eps_hat) / np.sqrt(1.0 - b)
    if t > 1 and noise is not None:
        out = out + np.sqrt(b) * noise
    return out


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly strided subsequence of 1..T ending at T."""
    if steps == 1:
        return np.array([T])
    return np.unique(np.round(np.linspace(1, T, steps)).astype(int))


def ddim_step(y_t: np.ndarray, t: int, t_prev: int, eps_hat: np.ndarray, noise: np.ndarray | None,
              schedule: Schedule, eta: float = 0.0, temperature: float = 1.0) -> np.ndarray:
    """Strided update y_t -> y_{t_prev}; eta interpolates deterministic (0) to ancestral (1)."""
    a_t = schedule.alpha(t)
    a_p = schedule.alpha(t_prev)
    y0_hat = (y_t - np.sqrt(1.0 - a_t) * eps_hat) / np.sqrt(a_t)
    sigma = eta * np.sqrt((1.0 - a_p) / (1.0 - a_t)) * np.sqrt(1.0 - a_t / a_p)
    out = np.sqrt(a_p) * y0_hat + np.sqrt(max(1.0 - a_p - sigma ** 2, 0.0)) * eps_hat
    if t_prev > 0 and noise is not None and sigma > 0:
        out = out + temperature * sigma * noise
    return out


def reverse_chain(eps_model: Callable[[np.ndarray, int], np.ndarray], y_T: np.ndarray,
                  schedule: Schedule, noise_fn: Callable[[int], np.ndarray],
                  cfg: DiffusionConfig | None = None) -> np.ndarray:
    """Run the reverse process from ``y_T``.

    ``eps_model(y_t, t)`` predicts the noise; ``noise_fn(t)`` returns fresh
    standard-normal noise shaped like ``y_T`` for step t.
    """
    y = y_T
    if cfg is None or cfg.sampler == "ddpm":
        for t in range(schedule.T, 0, -1):
            eps_hat = eps_model(y, t)
            y = denoise_step(y, t, eps_hat, noise_fn(t) if t > 1 else None, schedule)
        return y
    ts = ddim_timesteps(schedule.T, cfg.ddim_steps)
    prev = np.concatenate([[0], ts[:-1]])
    for t, tp in zip(ts[::-1], prev[::-1]):
        eps_hat = eps_model(y, int(t))
        y = ddim_step(y, int(t), int(tp), eps_hat, noise_fn(int(t)) if tp > 0 else None,
                      schedule, cfg.eta, cfg.temperature)
    return y


def dnn_loss(y0: np.ndarray, x: np.ndarray, schedule: Schedule, rng,
             eps_model: Callable[[np.ndarray, np.ndarray, np.ndarray], Tensor]) -> Tensor:
    """MSE between drawn noise and ``eps_model(y_t, t, x)`` at uniformly drawn steps.

    ``rng`` is a Generator or an integer seed.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    y0 = np.asarray(y0, dtype=np.float64)
    t = rng.integers(1, schedule.T + 1, size=y0.shape[0])
    eps = rng.standard_normal(y0.shape)
    y_t = diffuse_forward(y0, t, eps, schedule)
    return mse(eps, eps_model(y_t, t, x))
