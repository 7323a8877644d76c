"""P x M ensemble generation and mean-variance calibration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClimatologyMismatchError, ConfigError, GridMismatchError, MechanismError
from .fields import Climatology, EnsembleSeries, destandardize
from .models.bundle import ModelBundle
from .models.mechanisms import DEFAULT_P, check_kind
from .models.sampling import _sample_arrays


@dataclass(frozen=True)
class GenerationPlan:
    kind: str
    P: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", check_kind(self.kind))
        if self.P is None:
            object.__setattr__(self, "P", DEFAULT_P[self.kind])
        if self.P < 1:
            raise ConfigError("P must be >= 1")

    def check(self, bundle: ModelBundle) -> None:
        if bundle.kind != self.kind:
            raise MechanismError(f"plan is for {self.kind.upper()}, model is {bundle.kind.upper()}")
        if self.kind == "qnn" and self.P != len(bundle.mechanism.quantiles):
            raise ConfigError(f"QNN yields {len(bundle.mechanism.quantiles)} members per input, "
                              f"plan asks for {self.P}")


def generate_ensemble(bundle: ModelBundle, x_ens: EnsembleSeries, plan: GenerationPlan,
                      member_keys=None) -> EnsembleSeries:
    """Downscale every input member into P members; output member m * P + p.

    Input member m draws from streams keyed by ``member_keys[m]`` (default m),
    so permuting members together with their keys permutes the output blocks
    exactly.  The result is in physical units.
    """
    plan.check(bundle)
    if not x_ens.standardized or x_ens.clim_ref != bundle.x_clim.ref:
        raise ClimatologyMismatchError(
            "input ensemble must be standardized with the model's training climatology "
            f"(expected {bundle.x_clim.ref}, got {x_ens.clim_ref})")
    if x_ens.grid != bundle.grid:
        raise GridMismatchError("input grid differs from the model grid")
    n, m = x_ens.n_samples, x_ens.n_members
    keys = np.arange(m) if member_keys is None else np.asarray(member_keys, dtype=np.int64)
    if keys.shape != (m,):
        raise ConfigError("need one member key per input member")
    P = plan.P
    out = np.empty((n, m * P, *bundle.grid.shape))
    rows = np.arange(n)
    for j in range(m):
        k = np.stack([rows, np.full(n, keys[j])], axis=1)
        out[:, j * P:(j + 1) * P] = _sample_arrays(bundle, x_ens.values[:, j], k, P, plan.seed)
    ens = EnsembleSeries(bundle.grid, out, standardized=True, variable="target",
                         clim_ref=bundle.y_clim.ref)
    return destandardize(ens, bundle.y_clim)


def mva_calibrate(hindcast: EnsembleSeries, hindcast_clim: Climatology,
                  ref_clim: Climatology) -> EnsembleSeries:
    """Per-grid affine moment matching: (x - mu_hc) * sigma_ref / sigma_hc + mu_ref."""
    if hindcast.standardized:
        raise ConfigError("calibrate physical-unit ensembles")
    for c in (hindcast_clim, ref_clim):
        if c.mean.shape != hindcast.grid.shape:
            raise GridMismatchError("climatology grid differs from the ensemble grid")
    if np.any(hindcast_clim.std == 0):
        raise ConfigError("hindcast std is zero at one or more grid points")
    scale = ref_clim.std / hindcast_clim.std
    return hindcast.with_values((hindcast.values - hindcast_clim.mean) * scale + ref_clim.mean)
