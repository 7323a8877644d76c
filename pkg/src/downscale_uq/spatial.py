"""Scale-dependent verification: EOF truncation skill and zonal energy spectra."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateForecastError, GridMismatchError, NonFiniteError
from .fields import EnsembleSeries, FieldSeries, GridSpec, Series
from . import metrics

EARTH_RADIUS_KM = 6371.0
C0_KM = 2.0 * np.pi * EARTH_RADIUS_KM


# -- EOF ------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EofBasis:
    """Orthonormal spatial modes (K, G) of the reference anomalies, leading mode first."""

    grid: GridSpec
    modes: np.ndarray
    singular_values: np.ndarray
    explained: np.ndarray
    mean: np.ndarray
    weights: np.ndarray

    @property
    def K(self) -> int:
        return self.modes.shape[0]


def compute_eofs(reference: FieldSeries, cos_weight: bool = False) -> EofBasis:
    """EOFs of the temporal-mean anomalies via SVD; keeps K = min(N - 1, G) modes.

    With ``cos_weight`` anomalies are scaled by sqrt(cos(lat)) before the
    decomposition and unscaled on reconstruction.
    """
    n = reference.n_samples
    if n < 2:
        raise ConfigError("EOF analysis needs at least 2 samples")
    grid = reference.grid
    mean = reference.values.mean(axis=0)
    if cos_weight:
        w = np.sqrt(np.cos(np.deg2rad(grid.lats)))[:, None] * np.ones(grid.n_lon)
    else:
        w = np.ones(grid.shape)
    anom = ((reference.values - mean) * w).reshape(n, -1)
    _, s, vt = np.linalg.svd(anom, full_matrices=False)
    k = min(n - 1, grid.size)
    modes = vt[:k]
    # fix the sign so the largest-magnitude loading is positive
    idx = np.argmax(np.abs(modes), axis=1)
    modes = modes * np.sign(modes[np.arange(k), idx])[:, None]
    total = np.sum(s ** 2)
    if total == 0:
        raise DegenerateForecastError("reference field has no variance")
    return EofBasis(grid, modes, s[:k], s[:k] ** 2 / total, mean, w)


def _values(fields, basis: EofBasis) -> np.ndarray:
    if isinstance(fields, (FieldSeries, EnsembleSeries)):
        if fields.grid != basis.grid:
            raise GridMismatchError("fields and EOF basis are on different grids")
        return fields.values
    v = np.asarray(fields, dtype=np.float64)
    if v.shape[-2:] != basis.grid.shape:
        raise GridMismatchError("field shape does not match the EOF grid")
    return v


def project(fields, basis: EofBasis) -> np.ndarray:
    """Principal components (..., K) of fields centered on the basis climatology."""
    v = _values(fields, basis)
    anom = ((v - basis.mean) * basis.weights).reshape(*v.shape[:-2], -1)
    return anom @ basis.modes.T


def reconstruct(pcs: np.ndarray, basis: EofBasis, k_prime: int) -> np.ndarray:
    """Fields (..., H, W) rebuilt from the leading ``k_prime`` modes plus the climatology."""
    if not (1 <= k_prime <= basis.K):
        raise ConfigError(f"K' must lie in [1, {basis.K}], got {k_prime}")
    pcs = np.asarray(pcs)
    flat = pcs[..., :k_prime] @ basis.modes[:k_prime]
    return flat.reshape(*pcs.shape[:-1], *basis.grid.shape) / basis.weights + basis.mean


def truncate(fields: Series, basis: EofBasis, k_prime: int) -> Series:
    """Same container, values replaced by the K'-mode reconstruction."""
    return fields.with_values(reconstruct(project(fields, basis), basis, k_prime))


def eof_skill_curve(model: EnsembleSeries, benchmark: EnsembleSeries, obs: FieldSeries,
                    basis: EofBasis, k_primes: Sequence[int], fair: bool = False) -> list[dict]:
    """MSSS and CRPSS of ``model`` against ``benchmark`` and SSR of ``model`` per K'.

    Every member and the observation are reconstructed from K' modes.  Scores
    are aggregated over the domain (ratio of domain means).
    """
    pm, pb, po = project(model, basis), project(benchmark, basis), project(obs, basis)
    rows = []
    for kp in k_primes:
        m = model.with_values(reconstruct(pm, basis, kp))
        b = benchmark.with_values(reconstruct(pb, basis, kp))
        o = obs.with_values(reconstruct(po, basis, kp))
        mse_m = metrics.mse_ensemble_mean(m, o).mean
        mse_b = metrics.mse_ensemble_mean(b, o).mean
        crps_m = metrics.crps_ensemble(m, o, fair).mean
        crps_b = metrics.crps_ensemble(b, o, fair).mean
        rows.append({"K_prime": int(kp), "msss": 1.0 - mse_m / mse_b,
                     "crpss": 1.0 - crps_m / crps_b, "ssr": domain_ssr(m, o)})
    return rows


def domain_ssr(ens: EnsembleSeries, obs: FieldSeries) -> float:
    """sqrt((M+1)/M * domain-mean variance) / domain RMSE of the ensemble mean."""
    x = np.sort(ens.values, axis=1)
    m = x.shape[1]
    if m < 2:
        raise ConfigError("SSR needs at least 2 members")
    var = x.var(axis=1, ddof=1).mean()
    mse = ((x.mean(axis=1) - obs.values) ** 2).mean()
    if mse == 0:
        raise DegenerateForecastError("degenerate perfect forecast: RMSE is zero")
    return float(np.sqrt((m + 1) / m * var / mse))


# -- zonal spectra ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectrumSeries:
    """Zonal energy spectrum; ``energy`` is latitude-averaged with shape (..., n_k)."""

    k: np.ndarray
    energy: np.ndarray
    per_latitude: np.ndarray
    wavelength_km: np.ndarray
    grid: GridSpec


def circumference_km(lat_deg) -> np.ndarray:
    return C0_KM * np.cos(np.deg2rad(lat_deg))


def spectrum_multiplicity(n_lon: int) -> np.ndarray:
    """1 for the mean and (even n_lon) the Nyquist wavenumber, 2 for the paired ones."""
    mult = np.full(n_lon // 2 + 1, 2.0)
    mult[0] = 1.0
    if n_lon % 2 == 0:
        mult[-1] = 1.0
    return mult


def zonal_spectrum(fields, grid: GridSpec | None = None, anomaly: bool = False,
                   average: bool = True) -> SpectrumSeries:
    """Zonal energy spectrum averaged over latitudes (unweighted).

    F(k) = (1/G_lon) sum_j Y_j exp(-2 pi i k j / G_lon) per latitude and
    S = C_phi |F|^2 times 2 for wavenumbers with a conjugate partner.  With
    ``average`` the spectra are averaged over all leading axes (samples and
    members); ``anomaly`` removes the per-grid mean over samples first.
    """
    if isinstance(fields, (FieldSeries, EnsembleSeries)):
        grid = fields.grid
        v = fields.values
    else:
        if grid is None:
            raise ConfigError("a grid is required for raw arrays")
        v = np.asarray(fields, dtype=np.float64)
    if v.shape[-2:] != grid.shape:
        raise GridMismatchError("field shape does not match the grid")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("non-finite field passed to the spectrum")
    if anomaly:
        lead = tuple(range(v.ndim - 2))
        v = v - v.mean(axis=lead)
    F = np.fft.rfft(v, axis=-1) / grid.n_lon
    c_phi = circumference_km(grid.lats)[:, None]
    s_lat = spectrum_multiplicity(grid.n_lon) * c_phi * np.abs(F) ** 2
    if average and s_lat.ndim > 2:
        s_lat = s_lat.reshape(-1, *s_lat.shape[-2:]).mean(axis=0)
    k = np.arange(grid.n_lon // 2 + 1)
    wl = np.stack([wavenumber_to_wavelength(k, grid, i, allow_zero=True)
                   for i in range(grid.n_lat)], axis=1)
    return SpectrumSeries(k, s_lat.mean(axis=-2), s_lat, wl, grid)


def wavenumber_to_wavelength(k, grid: GridSpec, lat_index: int, allow_zero: bool = False):
    """Zonal wavelength in km, G_lon * dlon_km(lat) / k; k = 0 maps to inf if allowed."""
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 0) or (not allow_zero and np.any(k == 0)):
        raise ConfigError("wavenumber must be >= 1 (k = 0 has infinite wavelength)")
    dlon_km = C0_KM * np.cos(np.deg2rad(grid.lats[lat_index])) * abs(grid.dlon) / 360.0
    with np.errstate(divide="ignore"):
        out = grid.n_lon * dlon_km / k
    return out if out.ndim else float(out)


def _energy(s) -> np.ndarray:
    return s.energy if isinstance(s, SpectrumSeries) else np.asarray(s, dtype=np.float64)


def ress(s_model, s_ref) -> np.ndarray:
    """1 - S_model / S_ref per wavenumber; positive means too little energy."""
    a, b = _energy(s_model), _energy(s_ref)
    if a.shape != b.shape:
        raise ConfigError("spectra have different wavenumber axes")
    if np.any(b <= 0):
        raise DegenerateForecastError("reference energy is zero at an evaluated wavenumber")
    return 1.0 - a / b


def write_spectrum_csv(path: str | Path, s_model: SpectrumSeries, s_ref: SpectrumSeries,
                       lat_index: int | None = None) -> None:
    """Columns k,wavelength_km,S_model,S_ref,ress; wavelength at the middle latitude by default."""
    i = s_model.grid.n_lat // 2 if lat_index is None else lat_index
    r = ress(s_model, s_ref)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "wavelength_km", "S_model", "S_ref", "ress"])
        for j, k in enumerate(s_model.k):
            wr.writerow([int(k), repr(float(s_model.wavelength_km[j, i])), repr(float(s_model.energy[j])),
                         repr(float(s_ref.energy[j])), repr(float(r[j]))])


def write_eof_curve_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["K_prime", "msss", "crpss", "ssr"])
        for row in rows:
            wr.writerow([row["K_prime"], repr(row["msss"]), repr(row["crpss"]), repr(row["ssr"])])
