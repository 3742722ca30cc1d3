"""Hand-written neural surrogates: MLP for spectra, CNN decoder for absorption maps."""

from .io import load_model, save_model
from .layers import BatchNorm, Conv2d, Dense, Dropout, ReLU, Reshape, Sequential, Upsample2x
from .models import MLP_TARGETS, Surrogate, build_cnn, build_mlp
from .training import (
    Adam,
    TrainConfig,
    TrainReport,
    evaluate,
    evaluate_maps,
    fit,
    loss_and_grad,
    metrics,
    train_cnn,
    train_mlp,
)

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "Dropout",
    "MLP_TARGETS",
    "ReLU",
    "Reshape",
    "Sequential",
    "Surrogate",
    "TrainConfig",
    "TrainReport",
    "Upsample2x",
    "build_cnn",
    "build_mlp",
    "evaluate",
    "evaluate_maps",
    "fit",
    "load_model",
    "loss_and_grad",
    "metrics",
    "save_model",
    "train_cnn",
    "train_mlp",
]
