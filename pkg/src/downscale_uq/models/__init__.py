"""Convolutional backbone, the four uncertainty mechanisms, training and sampling."""

from .backbone import BackboneConfig, init_backbone, timestep_embedding
from .bundle import ModelBundle, load_bundle, quantize_params, save_bundle
from .diffusion import (
    DiffusionConfig,
    Schedule,
    ddim_step,
    ddim_timesteps,
    denoise_step,
    diffuse_forward,
    dnn_loss,
    make_beta_schedule,
    reverse_chain,
)
from .losses import QuantileLevels, kl_divergence, mse, pinball_loss, reparameterize, vnn_loss
from .mechanisms import (
    DEFAULT_P,
    KINDS,
    DnnConfig,
    QnnConfig,
    SnnConfig,
    VnnConfig,
    default_config,
)
from .sampling import (
    deterministic_predict,
    dnn_sample,
    qnn_predict,
    snn_sample,
    vnn_sample,
)
from .training import (
    Dataset,
    TrainConfig,
    random_search,
    snn_fit_noise,
    train,
    validate_hyperparameters,
)

__all__ = [
    "BackboneConfig", "DEFAULT_P", "Dataset", "DiffusionConfig", "DnnConfig", "KINDS",
    "ModelBundle", "QnnConfig", "QuantileLevels", "Schedule", "SnnConfig", "TrainConfig",
    "VnnConfig", "ddim_step", "ddim_timesteps", "default_config", "denoise_step",
    "deterministic_predict", "diffuse_forward", "dnn_loss", "dnn_sample", "init_backbone",
    "kl_divergence", "load_bundle", "make_beta_schedule", "mse", "pinball_loss", "qnn_predict",
    "quantize_params",
    "random_search", "reparameterize", "reverse_chain", "save_bundle", "snn_fit_noise",
    "snn_sample", "timestep_embedding", "train", "validate_hyperparameters", "vnn_loss", "vnn_sample",
]
