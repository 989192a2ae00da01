"""Minimal reverse-mode differentiation over float64 numpy arrays."""

from . import ops
from .gradcheck import grad_check
from .optim import Adam, adam_step, clip_grad_norm
from .params import ParamSet, load_checkpoint, save_checkpoint, uniform_init
from .tensor import Tape, Tensor, as_tensor

__all__ = [
    "Adam",
    "ParamSet",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "clip_grad_norm",
    "grad_check",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
    "uniform_init",
]
