"""Dense-matrix autodiff, AdamW and the learning-rate schedule."""

from . import ops
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .layers import MLP, Linear, Module
from .optim import AdamW, AdamWState, ScheduleConfig, adamw_step, lr_at
from .rng import derive_seed, make_rng
from .tensor import Matrix, Node, as_matrix, backward, constant, parameter

__all__ = [
    "MLP",
    "AdamW",
    "AdamWState",
    "Linear",
    "Matrix",
    "Module",
    "Node",
    "ScheduleConfig",
    "adamw_step",
    "as_matrix",
    "backward",
    "check_gradients",
    "constant",
    "derive_seed",
    "lr_at",
    "make_rng",
    "numerical_gradient",
    "ops",
    "parameter",
    "relative_error",
]
