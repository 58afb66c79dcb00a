"""Minimal float64 tensor core with tape-based reverse-mode autodiff."""
from app.numcore import ops
from app.numcore.gradcheck import autodiff_grad, finite_difference_grad, relative_error
from app.numcore.tensor import (
    Graph,
    GraphError,
    NumericError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    checked,
)

__all__ = [
    "ops",
    "Tensor",
    "Graph",
    "GraphError",
    "NumericError",
    "ShapeError",
    "as_tensor",
    "backward",
    "checked",
    "autodiff_grad",
    "finite_difference_grad",
    "relative_error",
]
