"""A small reverse-mode autodiff engine for the appearance networks."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .nn import (
    Conv2d,
    ConvTranspose2d,
    Gradients,
    LeakyReLU,
    Linear,
    Module,
    Parameter,
    ResidualBlock,
    Sequential,
    backward,
    forward,
    frozen,
)
from .optim import OptimizerState, clip_weights, rmsprop_step
from .tensor import Tensor

__all__ = [
    "Conv2d",
    "ConvTranspose2d",
    "Gradients",
    "LeakyReLU",
    "Linear",
    "Module",
    "OptimizerState",
    "Parameter",
    "ResidualBlock",
    "Sequential",
    "Tensor",
    "backward",
    "clip_weights",
    "forward",
    "frozen",
    "grad_check",
    "load_checkpoint",
    "read_checkpoint",
    "rmsprop_step",
    "save_checkpoint",
]
