"""Hybrid CNN/transformer super-resolution with cross-scale token attention."""

from .config import CstaConfig, FusionMode, ModelConfig, TrainConfig
from .model import ACT, forward, load_weights, make_identity_model, save_weights
from .tensor import Parameter, Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ACT", "CstaConfig", "FusionMode", "ModelConfig", "Parameter", "Tensor", "TrainConfig",
    "backward", "forward", "load_weights", "make_identity_model", "no_grad", "save_weights",
]
