"""Dense float64 reverse-mode differentiation engine."""
from . import nn, ops
from .gradcheck import check_parameters, gradient_check, numeric_gradient
from .ops import OP_KINDS, forward_op
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    DomainError,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    inject_fault,
    no_grad,
)

__all__ = [
    "AdamW", "AdamWState", "DomainError", "OP_KINDS", "ShapeError", "Tape", "Tensor",
    "active_tape", "adamw_step", "as_tensor", "backward", "check_parameters", "forward_op",
    "gradient_check", "inject_fault", "nn", "no_grad", "numeric_gradient", "ops",
]
