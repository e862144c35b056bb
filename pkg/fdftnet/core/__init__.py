"""Tensor core: dense float tensors with reverse-mode differentiation."""

from .gradcheck import grad_check, relative_error
from .ops import batch_dot, softmax
from .tensor import Function, Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Function",
    "Tensor",
    "backward",
    "batch_dot",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
    "relative_error",
    "softmax",
]
