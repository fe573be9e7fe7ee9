"""Minimal tensor + reverse-mode autodiff engine used by the classifier, the attacks and the VAE."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv2d, ConvTranspose2d, Dense, Network
from .optim import AdamState, adam_step, sgd_step
from .tensor import Tensor, as_tensor, parameter

__all__ = [
    "AdamState", "Conv2d", "ConvTranspose2d", "Dense", "Network", "Tensor",
    "adam_step", "as_tensor", "load_checkpoint", "ops", "parameter",
    "save_checkpoint", "sgd_step",
]
