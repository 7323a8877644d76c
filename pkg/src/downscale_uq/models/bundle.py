"""Trained model container and its on-disk form (JSON manifest + GFLD1 parameter blocks)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContainerFormatError, MechanismError
from ..fields import (
    Climatology,
    GridSpec,
    climatology_from_dict,
    climatology_to_dict,
    read_block,
    write_block,
)
from .backbone import BackboneConfig
from .mechanisms import MechanismConfig, check_kind, config_from_dict

MANIFEST = "manifest.json"
PARAMS = "params.gfld"
FORMAT_VERSION = 1


@dataclass(eq=False)
class ModelBundle:
    kind: str
    backbone: BackboneConfig
    mechanism: MechanismConfig
    params: dict[str, np.ndarray]
    grid: GridSpec
    x_clim: Climatology
    y_clim: Climatology
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = check_kind(self.kind)
        if self.mechanism.kind != self.kind:
            raise MechanismError(f"{self.mechanism.kind} config attached to a {self.kind} bundle")

    def require(self, kind: str) -> None:
        if self.kind != kind:
            raise MechanismError(f"operation needs a {kind.upper()} model, got {self.kind.upper()}")

    @property
    def snn_sigma(self) -> np.ndarray:
        self.require("snn")
        return self.params["snn_sigma"]


def quantize_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Round to float32-representable values so a saved bundle reloads bit-exactly."""
    return {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in params.items()}


def save_bundle(bundle: ModelBundle, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = sorted(bundle.params)
    with open(d / PARAMS, "wb") as fh:
        for name in names:
            flat = np.asarray(bundle.params[name]).reshape(1, 1, 1, -1)
            n = flat.shape[-1]
            write_block(fh, flat, np.zeros(1), np.arange(n, dtype=np.float64))
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": bundle.kind,
        "backbone": bundle.backbone.to_dict(),
        "mechanism": bundle.mechanism.to_dict(),
        "grid": {"lats": bundle.grid.lats.tolist(), "lons": bundle.grid.lons.tolist()},
        "x_climatology": climatology_to_dict(bundle.x_clim),
        "y_climatology": climatology_to_dict(bundle.y_clim),
        "parameters": [{"name": n, "shape": list(np.shape(bundle.params[n]))} for n in names],
        "metadata": bundle.metadata,
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return d


def load_bundle(directory: str | Path) -> ModelBundle:
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except json.JSONDecodeError as exc:
        raise ContainerFormatError(f"corrupt model manifest: {exc}") from exc
    params = {}
    with open(d / PARAMS, "rb") as fh:
        for entry in manifest["parameters"]:
            block = read_block(fh)
            if block is None:
                raise ContainerFormatError("truncated payload (missing parameter block)")
            vals = block[0].reshape(-1)
            shape = tuple(entry["shape"])
            if vals.size != int(np.prod(shape)):
                raise ContainerFormatError(f"parameter {entry['name']!r} has wrong size")
            params[entry["name"]] = vals.reshape(shape)
        if read_block(fh) is not None:
            raise ContainerFormatError("unexpected extra parameter block")
    kind = manifest["kind"]
    return ModelBundle(
        kind=kind,
        backbone=BackboneConfig.from_dict(manifest["backbone"]),
        mechanism=config_from_dict(kind, manifest["mechanism"]),
        params=params,
        grid=GridSpec(np.array(manifest["grid"]["lats"]), np.array(manifest["grid"]["lons"])),
        x_clim=climatology_from_dict(manifest["x_climatology"]),
        y_clim=climatology_from_dict(manifest["y_climatology"]),
        metadata=manifest.get("metadata", {}),
    )
