"""Grid-wise ensemble verification scores, skill scores and paired bootstrap tests.

Members are sorted along the member axis before any reduction, which makes
every score bit-identical under member permutation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateForecastError,
    GridMismatchError,
    NonFiniteError,
    ShapeMismatchError,
)
from .fields import EnsembleSeries, FieldSeries, GridSpec

ALPHAS = (0.01, 0.05, 0.1)
SCORE_KINDS = ("mse", "crps", "ssr")


def spatial_weights(grid: GridSpec, cos_weight: bool = False) -> np.ndarray:
    """Normalized (H, W) averaging weights; uniform unless ``cos_weight``."""
    if cos_weight:
        w = np.repeat(np.cos(np.deg2rad(grid.lats))[:, None], grid.n_lon, axis=1)
    else:
        w = np.ones(grid.shape)
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Per-grid values of one score plus identifying metadata."""

    grid: GridSpec
    values: np.ndarray
    name: str
    model: str = ""
    benchmark: str = ""
    lead_week: int | None = None
    cos_weight: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ShapeMismatchError(f"score shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite values in {self.name} table")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def mean(self) -> float:
        """Domain mean; unweighted unless the table was built with ``cos_weight``."""
        if not self.cos_weight:
            return float(self.values.mean())
        return float(np.sum(self.values * spatial_weights(self.grid, True)))

    def with_values(self, values, **changes) -> "ScoreTable":
        kw = dict(grid=self.grid, values=values, name=self.name, model=self.model,
                  benchmark=self.benchmark, lead_week=self.lead_week, cos_weight=self.cos_weight)
        kw.update(changes)
        return ScoreTable(**kw)

    def metadata(self) -> dict:
        return {"score": self.name, "model": self.model, "benchmark": self.benchmark,
                "lead_week": self.lead_week, "spatial_mean": self.mean,
                "weighting": "cos_lat" if self.cos_weight else "uniform"}


def _pair(ens: EnsembleSeries, obs: FieldSeries) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(ens, EnsembleSeries):
        raise ShapeMismatchError("forecast must be an EnsembleSeries")
    if ens.grid != obs.grid:
        raise GridMismatchError("forecast and observation grids differ")
    if ens.n_samples != obs.n_samples:
        raise ShapeMismatchError(
            f"forecast has {ens.n_samples} samples, observation has {obs.n_samples}")
    if ens.standardized != obs.standardized:
        raise ShapeMismatchError("forecast and observation must share units (standardized flag)")
    return np.sort(ens.values, axis=1), obs.values


def _table(ens, values, name, **meta) -> ScoreTable:
    return ScoreTable(ens.grid, values, name, **meta)


# -- per-sample contributions, shape (N, H, W) -------------------------------------

def _sq_error(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x.mean(axis=1) - y) ** 2


def _crps_terms(x: np.ndarray, y: np.ndarray, fair: bool = False) -> np.ndarray:
    """Per-sample CRPS for members sorted along axis 1."""
    m = x.shape[1]
    skill = np.abs(x - y[:, None]).mean(axis=1)
    if m == 1:
        return skill
    # sum over ordered pairs |x_i - x_j| = 2 * sum_i (2i - m + 1) x_(i) for sorted x
    coef = (2.0 * np.arange(m) - m + 1).reshape(1, m, 1, 1)
    pair = 2.0 * np.sum(coef * x, axis=1)
    denom = 2.0 * m * (m - 1) if fair else 2.0 * m * m
    return skill - pair / denom


def _variance(x: np.ndarray) -> np.ndarray:
    return x.var(axis=1, ddof=1)


def _ssr_from_sums(var_mean: np.ndarray, mse: np.ndarray, m: int) -> np.ndarray:
    if np.any(mse == 0):
        raise DegenerateForecastError("degenerate perfect forecast: RMSE is zero")
    return np.sqrt((m + 1) / m * var_mean) / np.sqrt(mse)


# -- public scores ------------------------------------------------------------------

def mse_ensemble_mean(ens: EnsembleSeries, obs: FieldSeries, **meta) -> ScoreTable:
    """Mean over samples of the squared ensemble-mean error at every grid point."""
    x, y = _pair(ens, obs)
    return _table(ens, _sq_error(x, y).mean(axis=0), "mse", **meta)


def crps_ensemble(ens: EnsembleSeries, obs: FieldSeries, fair: bool = False, **meta) -> ScoreTable:
    """Empirical ensemble CRPS averaged over samples.

    CRPS = mean_i |x_i - y| - sum_ij |x_i - x_j| / (2 M^2).  With ``fair``
    the pair term is divided by 2 M (M - 1) instead.
    """
    x, y = _pair(ens, obs)
    if fair and x.shape[1] < 2:
        raise ConfigError("fair CRPS needs at least 2 members")
    return _table(ens, _crps_terms(x, y, fair).mean(axis=0), "crps_fair" if fair else "crps", **meta)


def ssr(ens: EnsembleSeries, obs: FieldSeries, **meta) -> ScoreTable:
    """Spread-skill ratio sqrt((M+1)/M * mean variance) / RMSE of the ensemble mean."""
    x, y = _pair(ens, obs)
    m = x.shape[1]
    if m < 2:
        raise ConfigError("SSR needs at least 2 members")
    return _table(ens, _ssr_from_sums(_variance(x).mean(axis=0), _sq_error(x, y).mean(axis=0), m),
                  "ssr", **meta)


def _check_tables(a: ScoreTable, b: ScoreTable) -> None:
    if a.grid != b.grid:
        raise GridMismatchError("score tables are on different grids")
    if a.name != b.name:
        raise ConfigError(f"cannot compare {a.name} with {b.name}")


def skill_score(model: ScoreTable, ref: ScoreTable) -> ScoreTable:
    """1 - model/ref per grid point (MSSS for MSE tables, CRPSS for CRPS tables)."""
    _check_tables(model, ref)
    if np.any(ref.values <= 0):
        raise DegenerateForecastError("reference score must be positive everywhere")
    name = {"mse": "msss", "crps": "crpss", "crps_fair": "crpss_fair"}.get(model.name, model.name + "_ss")
    return model.with_values(1.0 - model.values / ref.values, name=name, benchmark=ref.model)


def relative_difference(score_s: ScoreTable, score_b: ScoreTable) -> ScoreTable:
    """Percent difference (s - b) / b * 100 per grid point."""
    _check_tables(score_s, score_b)
    if np.any(score_b.values == 0):
        raise DegenerateForecastError("baseline score is zero at one or more grid points")
    return score_s.with_values((score_s.values - score_b.values) / score_b.values * 100.0,
                               name=f"delta_{score_s.name}", benchmark=score_b.model)


# -- bootstrap ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Paired bootstrap of the percent score difference between two ensembles.

    ``deltas`` holds the domain-mean difference of every replicate; the grid
    arrays hold the per-point median and p-value.  The p-value is the share of
    replicates where the model beats the baseline (ties count half).
    """

    score: str
    n_replicates: int
    deltas: np.ndarray
    median: float
    p_value: float
    degenerate: bool
    grid: GridSpec
    grid_median: np.ndarray
    grid_p: np.ndarray
    grid_degenerate: np.ndarray
    seed: int = 0
    significance: dict = field(default_factory=dict)

    def grid_table(self) -> ScoreTable:
        return ScoreTable(self.grid, self.grid_median, f"delta_{self.score}")

    def summary(self) -> dict:
        return {
            "score": self.score,
            "replicates": self.n_replicates,
            "seed": self.seed,
            "median_delta_pct": self.median,
            "p_value": self.p_value,
            "degenerate_ties": self.degenerate,
            "significant": self.significance,
            "grid_points_degenerate": int(self.grid_degenerate.sum()),
            "grid_points_significant": {
                str(a): int(np.sum(significant(self.grid_p, a))) for a in ALPHAS},
        }


def p_value(deltas: np.ndarray, axis: int = 0) -> np.ndarray:
    """Share of replicates with delta < 0; exact ties count half."""
    return (np.sum(deltas < 0, axis=axis) + 0.5 * np.sum(deltas == 0, axis=axis)) / deltas.shape[axis]


def significant(p, alpha: float):
    """Two-sided flag: the improvement share is extreme in either direction."""
    p = np.asarray(p)
    return (p <= alpha) | (p >= 1.0 - alpha)


def significance_marker(p: float) -> str:
    for a in ALPHAS:
        if significant(p, a):
            return str(a)
    return ""


def _sample_terms(kind: str, x: np.ndarray, y: np.ndarray, fair: bool) -> tuple[np.ndarray, ...]:
    if kind == "mse":
        return (_sq_error(x, y),)
    if kind == "crps":
        return (_crps_terms(x, y, fair),)
    if kind == "ssr":
        if x.shape[1] < 2:
            raise ConfigError("SSR needs at least 2 members")
        return (_variance(x), _sq_error(x, y))
    raise ConfigError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")


def _replicate_scores(kind: str, terms, counts: np.ndarray, m: int, w: np.ndarray):
    """Grid scores (R, H, W) and domain scores (R,) from resampling counts (R, N)."""
    n = counts.shape[1]
    means = [(counts @ t.reshape(n, -1) / n).reshape(counts.shape[0], *t.shape[1:]) for t in terms]
    if kind != "ssr":
        grid = means[0]
        return grid, np.tensordot(grid, w, axes=([1, 2], [0, 1]))
    var, mse = means
    if np.any(mse == 0):
        raise DegenerateForecastError("degenerate perfect forecast in a bootstrap replicate")
    grid = np.abs(1.0 - np.sqrt((m + 1) / m * var / mse))
    return grid, np.tensordot(grid, w, axes=([1, 2], [0, 1]))


def resample_counts(n: int, replicates: int, seed: int) -> np.ndarray:
    """(R, N) draw counts; replicate r uses its own stream derived from (seed, r)."""
    counts = np.empty((replicates, n))
    for r in range(replicates):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        counts[r] = np.bincount(rng.integers(0, n, size=n), minlength=n)
    return counts


def bootstrap_significance(ens_s: EnsembleSeries, ens_b: EnsembleSeries, obs: FieldSeries,
                           score: str = "crps", replicates: int = 1000, seed: int = 0,
                           fair: bool = False, cos_weight: bool = False) -> BootstrapResult:
    """Paired bootstrap over samples of Delta_r = (s - b) / b * 100.

    Both ensembles are resampled with the same indices.  Scores are treated
    as negatively oriented; SSR is scored as |1 - SSR|.
    """
    if replicates < 1:
        raise ConfigError("need at least one bootstrap replicate")
    score = score.lower()
    xs, y = _pair(ens_s, obs)
    xb, yb = _pair(ens_b, obs)
    ts = _sample_terms(score, xs, y, fair)
    tb = _sample_terms(score, xb, yb, fair)
    counts = resample_counts(obs.n_samples, replicates, seed)
    w = spatial_weights(obs.grid, cos_weight)
    gs, ds = _replicate_scores(score, ts, counts, xs.shape[1], w)
    gb, db = _replicate_scores(score, tb, counts, xb.shape[1], w)
    if np.any(db == 0) or np.any(gb == 0):
        raise DegenerateForecastError("baseline score is zero in a bootstrap replicate")
    grid_delta = (gs - gb) / gb * 100.0
    delta = (ds - db) / db * 100.0
    p = float(p_value(delta))
    return BootstrapResult(
        score=score, n_replicates=replicates, deltas=delta, median=float(np.median(delta)),
        p_value=p, degenerate=bool(np.all(delta == 0)), grid=obs.grid,
        grid_median=np.median(grid_delta, axis=0), grid_p=p_value(grid_delta),
        grid_degenerate=np.all(grid_delta == 0, axis=0), seed=int(seed),
        significance={str(a): bool(significant(p, a)) for a in ALPHAS})


# -- writers ------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_score_csv(table: ScoreTable, path: str | Path, p_values: np.ndarray | None = None) -> None:
    """CSV with columns lat,lon,value and optionally p_value,sig."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["lat", "lon", "value"] + (["p_value", "sig"] if p_values is not None else []))
        for i, lat in enumerate(table.grid.lats):
            for j, lon in enumerate(table.grid.lons):
                row = [_fmt(lat), _fmt(lon), _fmt(table.values[i, j])]
                if p_values is not None:
                    row += [_fmt(p_values[i, j]), significance_marker(p_values[i, j])]
                wr.writerow(row)


def write_summary_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
