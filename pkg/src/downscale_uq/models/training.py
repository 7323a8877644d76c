"""Seeded training loop shared by the four mechanisms."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..errors import ConfigError, ShapeMismatchError, TrainingDivergedError
from ..fields import Climatology, FieldSeries, fit_climatology, standardize
from ..numerics import AdamState, adam_step
from . import mechanisms as mech
from .bundle import ModelBundle, quantize_params
from .diffusion import dnn_loss, make_beta_schedule
from .losses import mse, pinball_loss, vnn_loss

log = logging.getLogger(__name__)

AUGMENT_SIGMA = 0.1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    max_epochs: int = 2000
    patience: int = 100
    batch_size: int | None = None
    augment_sigma: float = AUGMENT_SIGMA
    widths: tuple[int, ...] = (8, 16)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.augment_sigma < 0:
            raise ConfigError("augmentation sigma must be >= 0")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["widths"] = list(self.widths)
        return d


@dataclass(frozen=True, eq=False)
class Dataset:
    """Standardized train/validation pairs plus the training climatologies."""

    x_train: FieldSeries
    y_train: FieldSeries
    x_val: FieldSeries
    y_val: FieldSeries
    x_clim: Climatology
    y_clim: Climatology

    def __post_init__(self):
        for f in (self.x_train, self.y_train, self.x_val, self.y_val):
            if not f.standardized:
                raise ConfigError("dataset fields must be standardized")
        if self.x_train.n_samples != self.y_train.n_samples or self.x_val.n_samples != self.y_val.n_samples:
            raise ShapeMismatchError("predictor/target sample counts differ")

    @classmethod
    def from_physical(cls, x: FieldSeries, y: FieldSeries, train_idx, val_idx) -> "Dataset":
        """Fit climatologies on the training split only and standardize both splits."""
        xc = fit_climatology(x, train_idx, "train")
        yc = fit_climatology(y, train_idx, "train")
        xs, ys = standardize(x, xc), standardize(y, yc)
        return cls(xs.subset(train_idx), ys.subset(train_idx), xs.subset(val_idx),
                   ys.subset(val_idx), xc, yc)

    @property
    def grid(self):
        return self.y_train.grid


def _sub_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


_INIT, _BATCH, _VAL = 0, 1, 2


def _objective(kind: str, m, cfg, schedule):
    """Returns loss(P, x, y, rng) -> Tensor for one mechanism."""
    if kind == "snn":
        return lambda P, x, y, rng: mse(y, mech.deterministic_forward(P, cfg, x)[:, 0])
    if kind == "qnn":
        return lambda P, x, y, rng: pinball_loss(y, mech.deterministic_forward(P, cfg, x),
                                                 m.quantiles)
    if kind == "vnn":
        def vnn(P, x, y, rng):
            eps = rng.standard_normal((x.shape[0], m.latent_dim))
            yhat, mu, lv = mech.vnn_forward(P, cfg, m, x, eps)
            return vnn_loss(y, yhat, mu, lv, m.beta)
        return vnn

    def dnn(P, x, y, rng):
        return dnn_loss(y, x, schedule, rng, lambda yt, t, xx: mech.dnn_forward(P, cfg, yt, t, xx))
    return dnn


def train(kind: str, dataset: Dataset, config: TrainConfig = TrainConfig(), seed: int = 0,
          mechanism: mech.MechanismConfig | None = None,
          callback: Callable[[int, float, float], None] | None = None) -> ModelBundle:
    """Fit one mechanism with Adam, input noise augmentation and early stopping.

    The parameters with the lowest validation loss are kept.  Validation
    losses of the stochastic objectives (VNN, DNN) use a fixed random stream
    so epochs are comparable.
    """
    kind = mech.check_kind(kind)
    m = mechanism if mechanism is not None else mech.default_config(kind)
    if m.kind != kind:
        raise ConfigError(f"{m.kind} config passed for {kind} training")
    grid = dataset.grid
    cfg = mech.backbone_config(kind, m, tuple(config.widths))
    schedule = make_beta_schedule(m.beta_start, m.beta_end, m.T) if kind == "dnn" else None
    objective = _objective(kind, m, cfg, schedule)

    params = mech.init_params(kind, m, cfg, grid.shape, _sub_rng(seed, _INIT))
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    rng = _sub_rng(seed, _BATCH)
    xt, yt = dataset.x_train.values, dataset.y_train.values
    xv, yv = dataset.x_val.values, dataset.y_val.values
    n = xt.shape[0]
    bs = n if config.batch_size is None else min(config.batch_size, n)

    def val_loss(p) -> float:
        return objective(mech.as_constants(p), xv, yv, _sub_rng(seed, _VAL)).item()

    best = val_loss(params)
    best_params, best_epoch, wait = params, 0, 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n) if bs < n else np.arange(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb = xt[idx]
            if config.augment_sigma:
                xb = xb + config.augment_sigma * rng.standard_normal(xb.shape)
            P = mech.as_trainable(params)
            loss = objective(P, xb, yt[idx], rng)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    f"{kind.upper()} training diverged at epoch {epoch} (batch loss {loss.item()}); "
                    f"last validation loss {best:.6g} at epoch {best_epoch}")
            loss.backward()
            grads = {k: t.grad for k, t in P.items() if t.grad is not None}
            params, state = adam_step(params, grads, state)
            losses.append(loss.item())
        train_loss = float(np.mean(losses))
        vl = val_loss(params)
        if not np.isfinite(vl):
            raise TrainingDivergedError(
                f"{kind.upper()} validation loss became non-finite at epoch {epoch}")
        history.append([epoch, train_loss, vl])
        log.debug("%s epoch %d train %.6f val %.6f", kind, epoch, train_loss, vl)
        if callback is not None:
            callback(epoch, train_loss, vl)
        if vl < best:
            best, best_params, best_epoch, wait = vl, params, epoch, 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    log.info("%s: best validation loss %.6f at epoch %d of %d", kind, best, best_epoch, len(history))

    final = quantize_params(best_params)
    if kind == "snn":
        pred = mech.deterministic_forward(mech.as_constants(final), cfg, xv).data[:, 0]
        final["snn_sigma"] = quantize_params({"s": snn_fit_noise(yv - pred, m.pooled_sigma)})["s"]
    metadata = {
        "seed": int(seed),
        "train": config.to_dict(),
        "epochs_run": len(history),
        "best_epoch": best_epoch,
        "best_val_loss": best,
        "history": history,
        "n_train": int(n),
        "n_val": int(xv.shape[0]),
        "backbone_note": "2-stage conv encoder-decoder (avg-pool down, nearest up, additive skips)",
    }
    return ModelBundle(kind, cfg, m, final, grid, dataset.x_clim, dataset.y_clim, metadata)


def snn_fit_noise(residuals, pooled: bool = False) -> np.ndarray:
    """Per-grid sample std (n-1) of validation residuals, optionally pooled to one value."""
    r = residuals.values if isinstance(residuals, FieldSeries) else np.asarray(residuals, dtype=np.float64)
    if r.shape[0] < 2:
        raise ValueError("noise fit needs at least 2 residual samples")
    sigma = r.std(axis=0, ddof=1)
    if pooled:
        sigma = np.full_like(sigma, np.sqrt(np.mean(sigma ** 2)))
    return sigma


# -- hyperparameter search hook ------------------------------------------------------

HYPERPARAMETER_SPACE = {
    "qnn": {"lr": ("loguniform", 1e-6, 1e-1), "weight_decay": ("loguniform", 1e-6, 1e-1)},
    "vnn": {"lr": ("loguniform", 1e-6, 5e-2), "weight_decay": ("loguniform", 1e-6, 1e-1),
            "latent_dim": ("choice", [32, 64, 128, 256, 512, 1024]),
            "beta": ("loguniform", 1e-4, 2e3), "skips": ("skips",)},
    "dnn": {"lr": ("loguniform", 1e-6, 1e-1), "weight_decay": ("loguniform", 1e-6, 1e-1),
            "beta_start": ("loguniform", 1e-6, 1e-3), "beta_end": ("loguniform", 1e-2, 2e-1),
            "T": ("choice", list(range(100, 1001, 100))),
            "time_dim": ("choice", list(range(128, 513, 64))),
            "ddim_steps": ("choice", list(range(10, 81, 5))),
            "eta": ("choice", [0.0, 0.5, 1.0]), "temperature": ("choice", [0.5, 1.0, 1.5, 2.0])},
}


def validate_hyperparameters(kind: str, values: dict) -> None:
    """Check user-supplied values against the search-space bounds."""
    space = HYPERPARAMETER_SPACE.get(mech.check_kind(kind), {})
    for name, value in values.items():
        if name not in space:
            continue
        dist, *bounds = space[name]
        if dist == "loguniform" and not (bounds[0] <= value <= bounds[1]):
            raise ConfigError(f"{kind}.{name}={value} outside [{bounds[0]}, {bounds[1]}]")
        if dist == "choice" and value not in bounds[0]:
            raise ConfigError(f"{kind}.{name}={value} not in {bounds[0]}")


def sample_hyperparameters(kind: str, rng: np.random.Generator, n_skips: int = 1) -> dict:
    out = {}
    for name, (dist, *bounds) in HYPERPARAMETER_SPACE.get(kind, {}).items():
        if dist == "loguniform":
            out[name] = float(np.exp(rng.uniform(np.log(bounds[0]), np.log(bounds[1]))))
        elif dist == "choice":
            out[name] = bounds[0][int(rng.integers(len(bounds[0])))]
        else:
            out[name] = tuple(bool(b) for b in rng.integers(0, 2, size=n_skips))
    return out


def random_search(kind: str, dataset: Dataset, n_trials: int, seed: int,
                  base: TrainConfig = TrainConfig(),
                  score: Callable[[ModelBundle], float] | None = None):
    """Seeded random search over the hyperparameter space.

    ``score`` defaults to the best validation loss; lower is better.
    Returns (best_bundle, trials) where trials is a list of (hyperparameters, score).
    """
    kind = mech.check_kind(kind)
    rng = _sub_rng(seed, 99)
    base_mech = mech.default_config(kind)
    trials, best_bundle, best_score = [], None, np.inf
    for i in range(n_trials):
        hp = sample_hyperparameters(kind, rng, len(base.widths) - 1)
        tc = replace(base, **{k: v for k, v in hp.items() if k in ("lr", "weight_decay")})
        mk = {k: v for k, v in hp.items() if k not in ("lr", "weight_decay")}
        m = replace(base_mech, **mk) if mk else base_mech
        try:
            bundle = train(kind, dataset, tc, seed + i, m)
        except TrainingDivergedError:
            trials.append((hp, float("inf")))
            continue
        s = score(bundle) if score is not None else bundle.metadata["best_val_loss"]
        trials.append((hp, float(s)))
        if s < best_score:
            best_bundle, best_score = bundle, s
    return best_bundle, trials
