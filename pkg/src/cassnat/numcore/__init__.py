"""Minimal dense-tensor arithmetic with reverse-mode differentiation."""

from . import ops
from .gradcheck import grad_check, grad_check_params
from .tensor import Graph, Tensor, as_tensor, backward, is_grad_enabled, make_node, no_grad

__all__ = [
    "Graph",
    "Tensor",
    "as_tensor",
    "backward",
    "grad_check",
    "grad_check_params",
    "is_grad_enabled",
    "make_node",
    "no_grad",
    "ops",
]
