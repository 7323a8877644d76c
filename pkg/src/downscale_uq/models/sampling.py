"""Per-mechanism sampling from a trained bundle.

Every chain (sample n, member key m, draw p) owns its own random stream,
seeded from ``(seed, n, m, p)``, so results do not depend on batch layout.
"""

from __future__ import annotations

import numpy as np

from ..errors import ClimatologyMismatchError, ConfigError
from ..fields import EnsembleSeries, FieldSeries, destandardize
from . import mechanisms as mech
from .bundle import ModelBundle
from .diffusion import make_beta_schedule, reverse_chain

CHAIN_CHUNK = 1024


def _check_input(bundle: ModelBundle, x: FieldSeries) -> None:
    if not x.standardized:
        raise ClimatologyMismatchError("predictor must be standardized with the model's climatology")
    if x.clim_ref is not None and x.clim_ref != bundle.x_clim.ref:
        raise ClimatologyMismatchError(
            f"predictor climatology {x.clim_ref} differs from model climatology {bundle.x_clim.ref}")
    if x.grid != bundle.grid:
        raise ClimatologyMismatchError("predictor grid differs from the model grid")


def _chain_rngs(seed: int, keys: np.ndarray, P: int) -> list[np.random.Generator]:
    """One generator per (row, draw), row-major over keys then draws."""
    return [np.random.default_rng(np.random.SeedSequence([int(seed), int(n), int(m), p]))
            for n, m in keys for p in range(P)]


def deterministic_arrays(bundle: ModelBundle, xs: np.ndarray) -> np.ndarray:
    """Raw backbone output (B, C, H, W) in standardized units."""
    P = mech.as_constants(bundle.params)
    return mech.deterministic_forward(P, bundle.backbone, xs).data


def _sample_arrays(bundle: ModelBundle, xs: np.ndarray, keys: np.ndarray, P: int,
                   seed: int) -> np.ndarray:
    """Draw P standardized members per input row; xs is (B, H, W), keys is (B, 2)."""
    if P < 1:
        raise ConfigError("P must be >= 1")
    xs = np.asarray(xs, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 2)
    B, H, W = xs.shape
    kind = bundle.kind
    if kind == "qnn":
        q = deterministic_arrays(bundle, xs)
        if P != q.shape[1]:
            raise ConfigError(f"QNN yields exactly {q.shape[1]} members per input, not {P}")
        return q
    if kind == "snn":
        base = deterministic_arrays(bundle, xs)[:, 0]
        sigma = bundle.params["snn_sigma"]
        noise = np.stack([g.standard_normal((H, W)) for g in _chain_rngs(seed, keys, P)])
        return base[:, None] + sigma * noise.reshape(B, P, H, W)
    if kind == "vnn":
        m = bundle.mechanism
        eps = np.stack([g.standard_normal(m.latent_dim) for g in _chain_rngs(seed, keys, P)])
        xr = np.repeat(xs, P, axis=0)
        out = np.empty((B * P, H, W))
        params = mech.as_constants(bundle.params)
        for s in range(0, B * P, CHAIN_CHUNK):
            sl = slice(s, s + CHAIN_CHUNK)
            out[sl] = mech.vnn_forward(params, bundle.backbone, m, xr[sl], eps[sl])[0].data
        return out.reshape(B, P, H, W)
    return _dnn_arrays(bundle, xs, keys, P, seed)


def _dnn_arrays(bundle, xs, keys, P, seed):
    m = bundle.mechanism
    schedule = make_beta_schedule(m.beta_start, m.beta_end, m.T)
    params = mech.as_constants(bundle.params)
    B, H, W = xs.shape
    rngs = _chain_rngs(seed, keys, P)
    xr = np.repeat(xs, P, axis=0)
    out = np.empty((B * P, H, W))
    for s in range(0, B * P, CHAIN_CHUNK):
        chunk = rngs[s:s + CHAIN_CHUNK]
        xc = xr[s:s + CHAIN_CHUNK]
        y_T = np.stack([g.standard_normal((H, W)) for g in chunk])

        def eps_model(y, t, xc=xc):
            return mech.dnn_forward(params, bundle.backbone, y, t, xc).data

        def noise_fn(t, chunk=chunk):
            return np.stack([g.standard_normal((H, W)) for g in chunk])

        out[s:s + len(chunk)] = reverse_chain(eps_model, y_T, schedule, noise_fn, m)
    return out.reshape(B, P, H, W)


def _to_ensemble(bundle: ModelBundle, x: FieldSeries, members: np.ndarray) -> EnsembleSeries:
    ens = EnsembleSeries(bundle.grid, members, standardized=True, variable="target",
                         clim_ref=bundle.y_clim.ref)
    return destandardize(ens, bundle.y_clim)


def _sample(kind: str, bundle: ModelBundle, x: FieldSeries, P: int, seed: int) -> EnsembleSeries:
    bundle.require(kind)
    _check_input(bundle, x)
    keys = np.stack([np.arange(x.n_samples), np.zeros(x.n_samples, dtype=np.int64)], axis=1)
    return _to_ensemble(bundle, x, _sample_arrays(bundle, x.values, keys, P, seed))


def snn_sample(bundle: ModelBundle, x: FieldSeries, P: int = mech.DEFAULT_P["snn"],
               seed: int = 0) -> EnsembleSeries:
    """Deterministic output plus independent N(0, sigma_g^2) noise at every grid point."""
    return _sample("snn", bundle, x, P, seed)


def qnn_predict(bundle: ModelBundle, x: FieldSeries) -> EnsembleSeries:
    """All quantile channels as exchangeable members, in physical units."""
    bundle.require("qnn")
    return _sample("qnn", bundle, x, len(bundle.mechanism.quantiles), 0)


def vnn_sample(bundle: ModelBundle, x: FieldSeries, P: int = mech.DEFAULT_P["vnn"],
               seed: int = 0) -> EnsembleSeries:
    """Decode P latent draws from the x-conditioned posterior per input."""
    return _sample("vnn", bundle, x, P, seed)


def dnn_sample(bundle: ModelBundle, x: FieldSeries, P: int = mech.DEFAULT_P["dnn"],
               seed: int = 0) -> EnsembleSeries:
    """P reverse diffusion chains from pure noise, each conditioned on x."""
    return _sample("dnn", bundle, x, P, seed)


def deterministic_predict(bundle: ModelBundle, x: FieldSeries) -> FieldSeries:
    """Backbone mean prediction of an SNN bundle (no noise), physical units."""
    bundle.require("snn")
    _check_input(bundle, x)
    y = deterministic_arrays(bundle, x.values)[:, 0]
    f = FieldSeries(bundle.grid, y, standardized=True, variable="target", clim_ref=bundle.y_clim.ref)
    return destandardize(f, bundle.y_clim)
