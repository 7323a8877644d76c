"""Gaussian-linear synthetic world with closed-form answers.

The predictor is a correlated Gaussian field with a red zonal spectrum.
The target is a smoothed, scaled copy of it plus correlated noise whose
standard deviation varies with latitude, so E[y|x] and the conditional
spread are known exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .fields import EnsembleSeries, FieldSeries, GridSpec
from .spatial import circumference_km, spectrum_multiplicity

_PREDICTOR, _NOISE, _FORECAST, _CONDITIONAL = 11, 12, 13, 14


@dataclass(frozen=True)
class SynthConfig:
    n_lat: int = 16
    n_lon: int = 20
    dlat: float = 2.7
    dlon: float = 2.7
    lat_north: float = 74.5
    lon_west: float = -13.0
    n_samples: int = 1000
    gamma: float = 3.0
    meridional_rho: float = 0.7
    blur_sigma: float = 1.0
    operator_scale: float = 1.0
    noise_std_min: float = 0.5
    noise_std_max: float = 0.8
    noise_gamma: float = 1.0
    noise_rho: float = 0.3
    predictor_offset: float = 5500.0
    predictor_scale: float = 80.0
    target_offset: float = 7.0
    target_scale: float = 2.5
    lead_growth: float = 0.12
    n_lead_weeks: int = 6
    members: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0 or self.noise_gamma < 0:
            raise ConfigError("spectral slopes must be positive")
        if min(self.noise_std_min, self.noise_std_max) < 0:
            raise ConfigError("noise std must be >= 0")
        if not (-1 < self.meridional_rho < 1 and -1 < self.noise_rho < 1):
            raise ConfigError("AR(1) coefficients must lie in (-1, 1)")
        if self.n_samples < 2 or self.members < 1 or self.n_lead_weeks < 1:
            raise ConfigError("n_samples >= 2, members >= 1 and n_lead_weeks >= 1 required")
        if self.predictor_scale <= 0 or self.target_scale <= 0 or self.blur_sigma < 0:
            raise ConfigError("scales must be positive")
        self.grid  # validates the geometry

    @property
    def grid(self) -> GridSpec:
        return GridSpec.regular(self.lat_north, self.lon_west, self.n_lat, self.n_lon,
                                self.dlat, self.dlon)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# -- covariance building blocks -----------------------------------------------------

def _ar1(n: int, rho: float) -> np.ndarray:
    i = np.arange(n)
    return rho ** np.abs(i[:, None] - i[None, :])


def _circulant(n: int, gamma: float, include_mean: bool) -> np.ndarray:
    """Stationary periodic covariance whose zonal spectrum falls like k^-gamma."""
    k = np.arange(n // 2 + 1, dtype=np.float64)
    var = np.zeros_like(k)
    var[1:] = k[1:] ** -gamma
    if include_mean:
        var[0] = 1.0
    d = np.arange(n)
    c = np.cos(2 * np.pi * np.outer(d, k) / n) @ var
    cov = c[np.abs(d[:, None] - d[None, :]) % n]
    return cov / cov[0, 0]


def predictor_covariance(cfg: SynthConfig) -> np.ndarray:
    """(G, G) covariance of the standardized predictor, unit variance per point."""
    return np.kron(_ar1(cfg.n_lat, cfg.meridional_rho), _circulant(cfg.n_lon, cfg.gamma, False))


def noise_std(cfg: SynthConfig) -> np.ndarray:
    """(H, W) noise std before the target scaling; grows from south to north."""
    frac = np.linspace(0.0, 1.0, cfg.n_lat)[::-1]
    s = cfg.noise_std_min + (cfg.noise_std_max - cfg.noise_std_min) * frac
    return np.repeat(s[:, None], cfg.n_lon, axis=1)


def noise_covariance(cfg: SynthConfig) -> np.ndarray:
    corr = np.kron(_ar1(cfg.n_lat, cfg.noise_rho), _circulant(cfg.n_lon, cfg.noise_gamma, True))
    s = noise_std(cfg).ravel()
    return corr * np.outer(s, s)


def _gauss_blur(n: int, sigma: float, periodic: bool) -> np.ndarray:
    if sigma == 0:
        return np.eye(n)
    i = np.arange(n)
    d = np.abs(i[:, None] - i[None, :])
    if periodic:
        d = np.minimum(d, n - d)
        w = np.exp(-0.5 * (d / sigma) ** 2)
    else:
        # reflect at the boundary: mirror images of each source point
        w = np.zeros((n, n))
        for src in range(n):
            for img in (src, -1 - src, 2 * n - 1 - src):
                w[:, src] += np.exp(-0.5 * ((i - img) / sigma) ** 2)
    return w / w.sum(axis=1, keepdims=True)


def operator_matrix(cfg: SynthConfig) -> np.ndarray:
    """(G, G) linear map from standardized predictor to the target signal."""
    return cfg.operator_scale * np.kron(_gauss_blur(cfg.n_lat, cfg.blur_sigma, False),
                                        _gauss_blur(cfg.n_lon, cfg.blur_sigma, True))


def _sqrtm(cov: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(cov)
    return vec * np.sqrt(np.clip(lam, 0.0, None))


def _draw(root: np.ndarray, seed: int, tag: int, keys, shape) -> np.ndarray:
    """One standard-normal vector per key, mapped through ``root``."""
    z = np.stack([np.random.default_rng(np.random.SeedSequence([int(seed), tag, *np.atleast_1d(k)]))
                  .standard_normal(root.shape[1]) for k in keys])
    return (z @ root.T).reshape(len(keys), *shape)


# -- oracle ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OracleAnswer:
    """Closed-form facts about the target given the predictor (physical units)."""

    cond_mean: FieldSeries
    noise_cov: np.ndarray
    cond_std: np.ndarray
    k: np.ndarray
    spectrum_target: np.ndarray
    spectrum_cond_mean: np.ndarray
    spectrum_noise: np.ndarray
    config: SynthConfig

    @property
    def cond_mse(self) -> np.ndarray:
        """Per-grid MSE of the conditional mean, the minimum over all estimators."""
        return self.cond_std ** 2

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "relation": "y = target_offset + target_scale * (A x_std + eta), "
                        "x_std = (x - predictor_offset) / predictor_scale",
            "cond_std": self.cond_std.tolist(),
            "cond_mse_domain_mean": float(self.cond_mse.mean()),
            "noise_cov_psd_min_eigenvalue": float(np.linalg.eigvalsh(self.noise_cov).min()),
            "spectrum": {"k": self.k.tolist(), "target": self.spectrum_target.tolist(),
                         "cond_mean": self.spectrum_cond_mean.tolist(),
                         "noise": self.spectrum_noise.tolist()},
        }


def expected_spectrum(cov: np.ndarray, grid: GridSpec, mean: float = 0.0) -> np.ndarray:
    """Latitude-averaged expected zonal spectrum of a Gaussian field with constant mean."""
    h, w = grid.shape
    k = np.arange(w // 2 + 1)
    e = np.exp(-2j * np.pi * np.outer(np.arange(w), k) / w) / w
    out = np.zeros(k.size)
    for i in range(h):
        blk = cov[i * w:(i + 1) * w, i * w:(i + 1) * w]
        power = np.real(np.einsum("jk,jl,lk->k", e.conj(), blk, e))
        power[0] += mean ** 2
        out += spectrum_multiplicity(w) * circumference_km(grid.lats[i]) * power
    return out / h


# -- generators ---------------------------------------------------------------------

def standardize_predictor(x: FieldSeries, cfg: SynthConfig) -> np.ndarray:
    return (x.values - cfg.predictor_offset) / cfg.predictor_scale


def gen_predictor(cfg: SynthConfig = SynthConfig()) -> FieldSeries:
    """Correlated Gaussian predictor in physical units; sample n has its own stream."""
    root = _sqrtm(predictor_covariance(cfg))
    z = _draw(root, cfg.seed, _PREDICTOR, range(cfg.n_samples), (cfg.n_lat, cfg.n_lon))
    return FieldSeries(cfg.grid, cfg.predictor_offset + cfg.predictor_scale * z,
                       variable="z500", units="m")


def gen_target(x: FieldSeries, cfg: SynthConfig = SynthConfig()) -> tuple[FieldSeries, OracleAnswer]:
    """Target y = offset + scale * (A x_std + eta) and its oracle."""
    grid = cfg.grid
    if x.grid != grid:
        raise ShapeMismatchError("predictor grid does not match the synthetic config")
    a = operator_matrix(cfg)
    xs = standardize_predictor(x, cfg).reshape(x.n_samples, -1)
    signal = (xs @ a.T).reshape(x.values.shape)
    eta = _draw(_sqrtm(noise_covariance(cfg)), cfg.seed, _NOISE, range(x.n_samples), grid.shape)
    s = cfg.target_scale
    y = FieldSeries(grid, cfg.target_offset + s * (signal + eta), variable="wind_speed", units="m s-1")
    return y, make_oracle(x, cfg)


def make_oracle(x: FieldSeries, cfg: SynthConfig = SynthConfig()) -> OracleAnswer:
    grid = cfg.grid
    a = operator_matrix(cfg)
    xs = standardize_predictor(x, cfg).reshape(x.n_samples, -1)
    s = cfg.target_scale
    mean = FieldSeries(grid, cfg.target_offset + s * (xs @ a.T).reshape(x.values.shape),
                       variable="wind_speed_cond_mean", units="m s-1")
    ncov = s ** 2 * noise_covariance(cfg)
    scov = s ** 2 * a @ predictor_covariance(cfg) @ a.T
    return OracleAnswer(
        cond_mean=mean, noise_cov=ncov, cond_std=s * noise_std(cfg),
        k=np.arange(cfg.n_lon // 2 + 1),
        spectrum_target=expected_spectrum(scov + ncov, grid, cfg.target_offset),
        spectrum_cond_mean=expected_spectrum(scov, grid, cfg.target_offset),
        spectrum_noise=expected_spectrum(ncov, grid), config=cfg)


def sample_conditional(x: FieldSeries, cfg: SynthConfig, members: int, seed: int) -> EnsembleSeries:
    """Draws from the true conditional distribution of y given x (a consistent ensemble)."""
    mean = make_oracle(x, cfg).cond_mean.values
    root = _sqrtm(cfg.target_scale ** 2 * noise_covariance(cfg))
    keys = [(n, m) for n in range(x.n_samples) for m in range(members)]
    eta = _draw(root, seed, _CONDITIONAL, keys, cfg.grid.shape)
    vals = mean[:, None] + eta.reshape(x.n_samples, members, *cfg.grid.shape)
    return EnsembleSeries(cfg.grid, vals, variable="wind_speed", units="m s-1")


def lead_spread(cfg: SynthConfig, week: int) -> float:
    """Perturbation amplitude (in climatological std units) at a lead week."""
    return cfg.lead_growth * week


def gen_forecast_ensemble(truth: FieldSeries, members: int = 10, lead_weeks=range(1, 7),
                          cfg: SynthConfig = SynthConfig(), bias: float = 0.0,
                          spread: float = 1.0) -> dict[int, EnsembleSeries]:
    """Per-lead-week forecast ensembles around ``truth``.

    Members are truth + s_w * sd * (d_0 + d_m) / sqrt(2), with a shared
    error d_0 and member deviations d_m drawn with the predictor covariance
    and s_w growing with lead week.  The truth is then exchangeable with the
    members.  ``spread`` rescales the ensemble about the climatological mean
    and ``bias`` is added afterwards.
    """
    if members < 2:
        raise ConfigError("a forecast ensemble needs at least 2 members")
    grid = truth.grid
    root = _sqrtm(predictor_covariance(cfg))
    sd = truth.values.std(axis=0, ddof=1)
    clim = truth.values.mean(axis=0)
    out = {}
    for week in lead_weeks:
        if int(week) < 1:
            raise ConfigError("lead weeks start at 1")
        keys = [(int(week), n, m) for n in range(truth.n_samples) for m in range(members + 1)]
        d = _draw(root, cfg.seed, _FORECAST, keys, grid.shape)
        d = d.reshape(truth.n_samples, members + 1, *grid.shape)
        pert = (d[:, :1] + d[:, 1:]) / np.sqrt(2.0)
        vals = truth.values[:, None] + lead_spread(cfg, week) * sd * pert
        vals = clim + spread * (vals - clim) + bias
        out[int(week)] = EnsembleSeries(grid, vals, variable=truth.variable, units=truth.units)
    return out


# -- whole world --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SynthWorld:
    config: SynthConfig
    x: FieldSeries
    y: FieldSeries
    oracle: OracleAnswer
    splits: dict = field(default_factory=dict)


def split_indices(n: int, fractions=(0.64, 0.16, 0.2)) -> dict[str, np.ndarray]:
    """Contiguous train/val/test blocks, in sample order."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must be three numbers summing to 1")
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return {"train": np.arange(a), "val": np.arange(a, b), "test": np.arange(b, n)}


def make_world(cfg: SynthConfig = SynthConfig()) -> SynthWorld:
    x = gen_predictor(cfg)
    y, oracle = gen_target(x, cfg)
    return SynthWorld(cfg, x, y, oracle, split_indices(cfg.n_samples))


def write_oracle_json(oracle: OracleAnswer, path: str | Path, extra: dict | None = None) -> None:
    d = oracle.to_dict()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
