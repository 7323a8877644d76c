"""Small convolutional encoder-decoder shared by all four mechanisms.

Layout for ``widths=(w0, w1, ..., wL)`` on an H x W grid::

    level 0   conv3(in->w0) relu  conv3(w0->w0) relu            -> skip0  (H, W)
    level l   avgpool2  conv3(w_{l-1}->w_l) relu  conv3 relu     -> skip_l (H/2^l, W/2^l)
    decoder   conv3(w_l->w_{l-1}) relu at low res, nearest x2,
              (+ skip_{l-1} if enabled), conv3 relu
    head      conv1x1(w0->out) + per-grid output bias

Time embeddings (diffusion) are projected by a linear map and added to the
pre-activations of the first convolution at level 0 and at the bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..numerics import Tensor, avg_pool2d, conv2d, matmul, relu, upsample_nearest2d
from ..errors import ConfigError


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 1
    widths: tuple[int, ...] = (8, 16)
    out_channels: int = 1
    time_dim: int = 0
    grid_bias: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ConfigError("widths must be a non-empty list of positive ints")
        if self.time_dim < 0 or self.time_dim % 2:
            raise ConfigError("time_dim must be a non-negative even number")

    @property
    def n_down(self) -> int:
        return len(self.widths) - 1

    def bottleneck_shape(self, grid_shape: tuple[int, int]) -> tuple[int, int, int]:
        f = 2 ** self.n_down
        return (self.widths[-1], grid_shape[0] // f, grid_shape[1] // f)

    def check_grid(self, grid_shape: tuple[int, int]) -> None:
        f = 2 ** self.n_down
        if grid_shape[0] % f or grid_shape[1] % f:
            raise ConfigError(f"grid {grid_shape} must be divisible by {f} for {self.n_down} pooling stages")

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "widths": list(self.widths),
                "out_channels": self.out_channels, "time_dim": self.time_dim,
                "grid_bias": self.grid_bias}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(d["in_channels"], tuple(d["widths"]), d["out_channels"],
                   d.get("time_dim", 0), d.get("grid_bias", True))


def _conv_init(rng: np.random.Generator, out_c: int, in_c: int, k: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (in_c * k * k)), size=(out_c, in_c, k, k))


def init_backbone(cfg: BackboneConfig, grid_shape: tuple[int, int],
                  rng: np.random.Generator) -> dict[str, np.ndarray]:
    cfg.check_grid(grid_shape)
    p: dict[str, np.ndarray] = {}
    w = cfg.widths
    prev = cfg.in_channels
    for lvl, width in enumerate(w):
        p[f"enc{lvl}_c1_w"] = _conv_init(rng, width, prev, 3)
        p[f"enc{lvl}_c1_b"] = np.zeros(width)
        p[f"enc{lvl}_c2_w"] = _conv_init(rng, width, width, 3)
        p[f"enc{lvl}_c2_b"] = np.zeros(width)
        prev = width
    for lvl in range(cfg.n_down, 0, -1):
        p[f"dec{lvl}_c1_w"] = _conv_init(rng, w[lvl - 1], w[lvl], 3)
        p[f"dec{lvl}_c1_b"] = np.zeros(w[lvl - 1])
        p[f"dec{lvl}_c2_w"] = _conv_init(rng, w[lvl - 1], w[lvl - 1], 3)
        p[f"dec{lvl}_c2_b"] = np.zeros(w[lvl - 1])
    p["head_w"] = rng.normal(0.0, np.sqrt(1.0 / w[0]), size=(cfg.out_channels, w[0], 1, 1))
    p["head_b"] = np.zeros(cfg.out_channels)
    if cfg.grid_bias:
        p["head_grid"] = np.zeros((cfg.out_channels, *grid_shape))
    if cfg.time_dim:
        for tag, width in (("t0", w[0]), ("tL", w[-1])):
            p[f"{tag}_w"] = rng.normal(0.0, np.sqrt(1.0 / cfg.time_dim), size=(cfg.time_dim, width))
            p[f"{tag}_b"] = np.zeros(width)
    return p


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer diffusion steps, shape (len(t), dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _add_time(h: Tensor, P: Mapping[str, Tensor], tag: str, temb: Tensor | None) -> Tensor:
    if temb is None:
        return h
    proj = matmul(temb, P[f"{tag}_w"]) + P[f"{tag}_b"]
    return h + proj.reshape(proj.shape[0], proj.shape[1], 1, 1)


def encode(P: Mapping[str, Tensor], cfg: BackboneConfig, x: Tensor,
           temb: Tensor | None = None) -> list[Tensor]:
    """Run the encoder; returns the per-level feature maps (last = bottleneck)."""
    skips = []
    h = x
    for lvl in range(len(cfg.widths)):
        if lvl:
            h = avg_pool2d(h, 2)
        h = conv2d(h, P[f"enc{lvl}_c1_w"], P[f"enc{lvl}_c1_b"])
        if lvl == 0:
            h = _add_time(h, P, "t0", temb)
        elif lvl == cfg.n_down:
            h = _add_time(h, P, "tL", temb)
        h = relu(h)
        h = relu(conv2d(h, P[f"enc{lvl}_c2_w"], P[f"enc{lvl}_c2_b"]))
        skips.append(h)
    if cfg.n_down == 0 and temb is not None:
        skips[-1] = _add_time(skips[-1], P, "tL", temb)
    return skips


def decode(P: Mapping[str, Tensor], cfg: BackboneConfig, h: Tensor, skips: list[Tensor],
           use_skips: tuple[bool, ...] | None = None) -> Tensor:
    use_skips = use_skips if use_skips is not None else (True,) * cfg.n_down
    for lvl in range(cfg.n_down, 0, -1):
        h = relu(conv2d(h, P[f"dec{lvl}_c1_w"], P[f"dec{lvl}_c1_b"]))
        h = upsample_nearest2d(h, 2)
        if use_skips[lvl - 1]:
            h = h + skips[lvl - 1]
        h = relu(conv2d(h, P[f"dec{lvl}_c2_w"], P[f"dec{lvl}_c2_b"]))
    out = conv2d(h, P["head_w"], P["head_b"])
    if "head_grid" in P:
        out = out + P["head_grid"]
    return out


def forward(P: Mapping[str, Tensor], cfg: BackboneConfig, x: Tensor,
            temb: Tensor | None = None) -> Tensor:
    """(B, in_channels, H, W) -> (B, out_channels, H, W)."""
    skips = encode(P, cfg, x, temb)
    return decode(P, cfg, skips[-1], skips)
