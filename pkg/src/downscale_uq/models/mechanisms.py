"""Mechanism configurations and the network forward pass of each mechanism."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from ..errors import ConfigError, MechanismError
from ..numerics import Tensor, concat, matmul, relu
from . import backbone as bb
from .diffusion import DiffusionConfig
from .losses import QuantileLevels, reparameterize

KINDS = ("snn", "qnn", "vnn", "dnn")
DEFAULT_P = {"snn": 20, "qnn": 10, "vnn": 20, "dnn": 20}


@dataclass(frozen=True)
class SnnConfig:
    pooled_sigma: bool = False
    kind = "snn"

    def to_dict(self) -> dict:
        return {"pooled_sigma": self.pooled_sigma}


@dataclass(frozen=True)
class QnnConfig:
    quantiles: QuantileLevels = QuantileLevels()
    kind = "qnn"

    def to_dict(self) -> dict:
        return {"quantiles": list(self.quantiles.levels)}


@dataclass(frozen=True)
class VnnConfig:
    latent_dim: int = 32
    beta: float = 0.01
    skips: tuple[bool, ...] | None = None
    kind = "vnn"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent dimension must be >= 1")
        if self.beta < 0:
            raise ConfigError("KL weight must be >= 0")

    def to_dict(self) -> dict:
        return {"latent_dim": self.latent_dim, "beta": self.beta,
                "skips": None if self.skips is None else list(self.skips)}


class DnnConfig(DiffusionConfig):
    kind = "dnn"


MechanismConfig = Union[SnnConfig, QnnConfig, VnnConfig, DnnConfig]


def default_config(kind: str) -> MechanismConfig:
    return {"snn": SnnConfig, "qnn": QnnConfig, "vnn": VnnConfig, "dnn": DnnConfig}[check_kind(kind)]()


def config_from_dict(kind: str, d: dict) -> MechanismConfig:
    kind = check_kind(kind)
    if kind == "snn":
        return SnnConfig(**d)
    if kind == "qnn":
        return QnnConfig(QuantileLevels(tuple(d.get("quantiles", QuantileLevels().levels))))
    if kind == "vnn":
        skips = d.get("skips")
        return VnnConfig(d.get("latent_dim", 32), d.get("beta", 0.01),
                         None if skips is None else tuple(bool(s) for s in skips))
    return DnnConfig(**d)


def check_kind(kind: str) -> str:
    k = str(kind).lower()
    if k not in KINDS:
        raise MechanismError(f"unknown mechanism {kind!r}; expected one of {KINDS}")
    return k


def backbone_config(kind: str, mech: MechanismConfig, widths: tuple[int, ...]) -> bb.BackboneConfig:
    if kind == "qnn":
        return bb.BackboneConfig(1, widths, len(mech.quantiles))
    if kind == "dnn":
        return bb.BackboneConfig(2, widths, 1, time_dim=mech.time_dim)
    return bb.BackboneConfig(1, widths, 1)


def init_params(kind: str, mech: MechanismConfig, cfg: bb.BackboneConfig,
                grid_shape: tuple[int, int], rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = bb.init_backbone(cfg, grid_shape, rng)
    if kind == "vnn":
        c, h, w = cfg.bottleneck_shape(grid_shape)
        feat = c * h * w
        dz = mech.latent_dim
        p["lat_mu_w"] = rng.normal(0.0, np.sqrt(1.0 / feat), size=(feat, dz))
        p["lat_mu_b"] = np.zeros(dz)
        p["lat_lv_w"] = rng.normal(0.0, np.sqrt(0.1 / feat), size=(feat, dz))
        p["lat_lv_b"] = np.zeros(dz)
        p["lat_dec_w"] = rng.normal(0.0, np.sqrt(2.0 / dz), size=(dz, feat))
        p["lat_dec_b"] = np.zeros(feat)
    return p


# -- forward passes over standardized arrays ---------------------------------------

def _chan(a) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    return a.reshape(a.shape[0], 1, *a.shape[1:])


def deterministic_forward(P: Mapping[str, Tensor], cfg: bb.BackboneConfig, x) -> Tensor:
    """(B, H, W) -> (B, out_channels, H, W)."""
    return bb.forward(P, cfg, _chan(x))


def vnn_forward(P: Mapping[str, Tensor], cfg: bb.BackboneConfig, mech: VnnConfig, x,
                eps: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (prediction (B, H, W), mu_z, logvar_z); ``eps`` is (B, d_z)."""
    skips = bb.encode(P, cfg, _chan(x))
    h = skips[-1]
    b, c, hh, ww = h.shape
    flat = h.reshape(b, c * hh * ww)
    mu = matmul(flat, P["lat_mu_w"]) + P["lat_mu_b"]
    logvar = matmul(flat, P["lat_lv_w"]) + P["lat_lv_b"]
    z = reparameterize(mu, logvar, eps)
    hd = relu(matmul(z, P["lat_dec_w"]) + P["lat_dec_b"]).reshape(b, c, hh, ww)
    out = bb.decode(P, cfg, hd, skips, mech.skips)
    return out.reshape(b, *out.shape[2:]), mu, logvar


def dnn_forward(P: Mapping[str, Tensor], cfg: bb.BackboneConfig, y_t, t, x) -> Tensor:
    """Noise prediction eps_hat(y_t, t, x) with x concatenated as a second channel."""
    inp = concat([_chan(y_t), _chan(x)], axis=1)
    temb = Tensor(bb.timestep_embedding(np.broadcast_to(t, (inp.shape[0],)), cfg.time_dim))
    out = bb.forward(P, cfg, inp, temb)
    return out.reshape(out.shape[0], *out.shape[2:])


def as_constants(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def as_trainable(params: Mapping[str, np.ndarray], exclude=()) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=k not in exclude) for k, v in params.items()}
