"""Desk-scale simulation lab for box-free model watermarking: the
gradient-based removal attack and the decoder gradient shield defense."""

from ._kernels import ACTIVE_BACKEND
from .tensor import (
    Graph,
    GradientTap,
    GraphError,
    NumericsError,
    ShapeError,
    Tensor,
    apply_tap,
    backward,
    grad_check,
    op_forward,
)

__version__ = "0.1.0"

__all__ = [
    "ACTIVE_BACKEND",
    "Graph",
    "GradientTap",
    "GraphError",
    "NumericsError",
    "ShapeError",
    "Tensor",
    "apply_tap",
    "backward",
    "grad_check",
    "op_forward",
    "__version__",
]
