"""Grid geometry, field containers, standardisation and the GFLD1 file format.

Values are stored row-major as (sample, [member,] lat, lon) with latitudes
running north to south and longitudes west to east.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

from .errors import (
    ContainerFormatError,
    GridMismatchError,
    NonFiniteError,
    ShapeMismatchError,
    StandardizationError,
    ZeroVarianceError,
)

MAGIC = b"GFLD1"
_HEADER = struct.Struct("<4I")
_SPACING_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Regular latitude/longitude grid (degrees)."""

    lats: np.ndarray
    lons: np.ndarray

    def __post_init__(self):
        lats = _frozen(np.ravel(self.lats))
        lons = _frozen(np.ravel(self.lons))
        if lats.size < 2 or lons.size < 4:
            raise GridMismatchError(
                f"grid needs >= 2 latitudes and >= 4 longitudes, got {lats.size}x{lons.size}"
            )
        for name, ax in (("lats", lats), ("lons", lons)):
            d = np.diff(ax)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise GridMismatchError(f"{name} must be strictly monotone")
            if np.max(np.abs(d - d[0])) > _SPACING_TOL:
                raise GridMismatchError(f"{name} spacing is not uniform")
        if np.any(np.abs(lats) > 90):
            raise GridMismatchError("latitudes must lie in [-90, 90]")
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)

    @classmethod
    def regular(cls, lat_north: float, lon_west: float, n_lat: int, n_lon: int,
                dlat: float, dlon: float) -> "GridSpec":
        lats = lat_north - dlat * np.arange(n_lat)
        lons = lon_west + dlon * np.arange(n_lon)
        return cls(lats, lons)

    @property
    def n_lat(self) -> int:
        return self.lats.size

    @property
    def n_lon(self) -> int:
        return self.lons.size

    @property
    def size(self) -> int:
        return self.n_lat * self.n_lon

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def dlat(self) -> float:
        return float(abs(self.lats[1] - self.lats[0]))

    @property
    def dlon(self) -> float:
        return float(abs(self.lons[1] - self.lons[0]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (self.lats.shape == other.lats.shape and self.lons.shape == other.lons.shape
                and np.array_equal(self.lats, other.lats)
                and np.array_equal(self.lons, other.lons))

    def __hash__(self):
        return hash((self.lats.tobytes(), self.lons.tobytes()))


@dataclass(frozen=True, eq=False)
class Climatology:
    """Per-grid-point mean and sample standard deviation of one variable."""

    mean: np.ndarray
    std: np.ndarray
    source_split: str = "train"

    def __post_init__(self):
        mean = _frozen(self.mean)
        std = _frozen(self.std)
        if mean.shape != std.shape:
            raise ShapeMismatchError("climatology mean/std shapes differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise NonFiniteError("climatology contains non-finite values")
        if np.any(std <= 0):
            raise ZeroVarianceError("zero variance at one or more grid points")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def ref(self) -> str:
        """Content hash used to check that two artifacts share a climatology."""
        h = hashlib.sha1()
        h.update(self.mean.tobytes())
        h.update(self.std.tobytes())
        h.update(self.source_split.encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FieldSeries:
    """N samples of one variable on a grid; ``values`` has shape (N, n_lat, n_lon)."""

    grid: GridSpec
    values: np.ndarray
    standardized: bool = False
    variable: str = ""
    units: str = ""
    clim_ref: str | None = None

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 3 or v.shape[1:] != self.grid.shape:
            raise ShapeMismatchError(
                f"values shape {v.shape} does not match (N, {self.grid.n_lat}, {self.grid.n_lon})"
            )
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def subset(self, idx) -> "FieldSeries":
        return replace(self, values=self.values[np.asarray(idx)])

    def with_values(self, values: np.ndarray, **changes) -> "FieldSeries":
        return replace(self, values=values, **changes)

    def as_ensemble(self) -> "EnsembleSeries":
        return EnsembleSeries(self.grid, self.values[:, None], standardized=self.standardized,
                              variable=self.variable, units=self.units, clim_ref=self.clim_ref)


@dataclass(frozen=True, eq=False)
class EnsembleSeries:
    """N samples x members of one variable; ``values`` has shape (N, members, n_lat, n_lon)."""

    grid: GridSpec
    values: np.ndarray
    standardized: bool = False
    variable: str = ""
    units: str = ""
    clim_ref: str | None = None

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 4 or v.shape[2:] != self.grid.shape:
            raise ShapeMismatchError(
                f"values shape {v.shape} does not match (N, M, {self.grid.n_lat}, {self.grid.n_lon})"
            )
        if v.shape[1] < 1:
            raise ShapeMismatchError("ensemble needs at least one member")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("ensemble contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_members(self) -> int:
        return self.values.shape[1]

    def member(self, m: int) -> FieldSeries:
        return FieldSeries(self.grid, self.values[:, m], standardized=self.standardized,
                           variable=self.variable, units=self.units, clim_ref=self.clim_ref)

    def subset(self, idx) -> "EnsembleSeries":
        return replace(self, values=self.values[np.asarray(idx)])

    def with_values(self, values: np.ndarray, **changes) -> "EnsembleSeries":
        return replace(self, values=values, **changes)


Series = Union[FieldSeries, EnsembleSeries]


def _check_grid(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise GridMismatchError("grids differ")


def wind_speed_from_components(u: FieldSeries, v: FieldSeries) -> FieldSeries:
    """Wind speed sqrt(u^2 + v^2) from its zonal and meridional components."""
    _check_grid(u.grid, v.grid)
    if u.values.shape != v.values.shape:
        raise ShapeMismatchError("u and v differ in sample count")
    speed = np.hypot(u.values, v.values)
    return FieldSeries(u.grid, speed, variable="wind_speed", units=u.units or v.units)


def fit_climatology(f: Series, sample_ids: Sequence[int] | None = None,
                    source_split: str = "train") -> Climatology:
    """Per-grid mean and sample std (n-1) over the selected samples.

    For an ensemble, members of the selected samples are pooled.
    """
    vals = f.values if sample_ids is None else f.values[np.asarray(sample_ids)]
    if isinstance(f, EnsembleSeries):
        vals = vals.reshape(-1, *f.grid.shape)
    if vals.shape[0] < 2:
        raise ValueError("climatology needs at least 2 samples")
    mean = vals.mean(axis=0)
    std = vals.std(axis=0, ddof=1)
    if np.any(std <= 0):
        raise ZeroVarianceError("zero variance at one or more grid points")
    return Climatology(mean, std, source_split)


def _check_clim(f: Series, c: Climatology) -> None:
    if c.mean.shape != f.grid.shape:
        raise GridMismatchError("climatology grid differs from field grid")


def standardize(f: Series, c: Climatology) -> Series:
    if f.standardized:
        raise StandardizationError("field is already standardized")
    _check_clim(f, c)
    return f.with_values((f.values - c.mean) / c.std, standardized=True, clim_ref=c.ref)


def destandardize(f: Series, c: Climatology) -> Series:
    if not f.standardized:
        raise StandardizationError("field is not standardized")
    _check_clim(f, c)
    if f.clim_ref is not None and f.clim_ref != c.ref:
        raise StandardizationError("field was standardized with a different climatology")
    return f.with_values(f.values * c.std + c.mean, standardized=False, clim_ref=None)


# --------------------------------------------------------------------------
# GFLD1 container
# --------------------------------------------------------------------------

def write_block(fh: BinaryIO, values: np.ndarray, lats: np.ndarray, lons: np.ndarray) -> None:
    """Write one GFLD1 block; ``values`` must be 4-D (N, members, n_lat, n_lon)."""
    values = np.asarray(values)
    if values.ndim != 4:
        raise ShapeMismatchError("GFLD1 blocks are 4-D")
    n, m, gl, go = values.shape
    if len(lats) != gl or len(lons) != go:
        raise ShapeMismatchError("coordinate lengths do not match the value block")
    fh.write(MAGIC)
    fh.write(_HEADER.pack(n, m, gl, go))
    fh.write(np.asarray(lats, dtype="<f8").tobytes())
    fh.write(np.asarray(lons, dtype="<f8").tobytes())
    fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContainerFormatError(f"truncated payload ({what})")
    return buf


def read_block(fh: BinaryIO) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Read one GFLD1 block; returns None at a clean end of stream."""
    magic = fh.read(len(MAGIC))
    if not magic:
        return None
    if magic != MAGIC:
        raise ContainerFormatError("unrecognized container")
    n, m, gl, go = _HEADER.unpack(_read_exact(fh, _HEADER.size, "header"))
    lats = np.frombuffer(_read_exact(fh, 8 * gl, "latitudes"), dtype="<f8").astype(np.float64)
    lons = np.frombuffer(_read_exact(fh, 8 * go, "longitudes"), dtype="<f8").astype(np.float64)
    count = n * m * gl * go
    raw = _read_exact(fh, 4 * count, "values")
    vals = np.frombuffer(raw, dtype="<f4").reshape(n, m, gl, go)
    if not np.all(np.isfinite(vals)):
        raise ContainerFormatError("NaN or infinite value in payload")
    return vals.astype(np.float64), lats, lons


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_field(f: Series, path: str | Path, extra_meta: dict | None = None) -> None:
    path = Path(path)
    vals = f.values if isinstance(f, EnsembleSeries) else f.values[:, None]
    with open(path, "wb") as fh:
        write_block(fh, vals, f.grid.lats, f.grid.lons)
    meta = {
        "container": "ensemble" if isinstance(f, EnsembleSeries) else "field",
        "variable": f.variable,
        "units": f.units,
        "standardized": bool(f.standardized),
        "climatology": f.clim_ref,
    }
    if extra_meta:
        meta.update(extra_meta)
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_field(path: str | Path) -> Series:
    path = Path(path)
    with open(path, "rb") as fh:
        block = read_block(fh)
        if block is None:
            raise ContainerFormatError("unrecognized container")
        if fh.read(1):
            raise ContainerFormatError("trailing data after value block")
    vals, lats, lons = block
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    grid = GridSpec(lats, lons)
    common = dict(standardized=bool(meta.get("standardized", False)),
                  variable=meta.get("variable", ""), units=meta.get("units", ""),
                  clim_ref=meta.get("climatology"))
    container = meta.get("container", "field" if vals.shape[1] == 1 else "ensemble")
    if container == "field":
        if vals.shape[1] != 1:
            raise ContainerFormatError("field container with more than one member")
        return FieldSeries(grid, vals[:, 0], **common)
    return EnsembleSeries(grid, vals, **common)


def climatology_to_dict(c: Climatology) -> dict:
    return {"source_split": c.source_split, "ref": c.ref,
            "mean": c.mean.tolist(), "std": c.std.tolist()}


def climatology_from_dict(d: dict) -> Climatology:
    c = Climatology(np.array(d["mean"]), np.array(d["std"]), d.get("source_split", "train"))
    if "ref" in d and d["ref"] != c.ref:
        raise ContainerFormatError("climatology content does not match its recorded ref")
    return c


def save_climatology(c: Climatology, path: str | Path) -> None:
    """Climatologies are kept as JSON so the float64 values (and their ref) survive."""
    Path(path).write_text(json.dumps(climatology_to_dict(c), sort_keys=True) + "\n")


def load_climatology(path: str | Path) -> Climatology:
    return climatology_from_dict(json.loads(Path(path).read_text()))
