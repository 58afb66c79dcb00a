"""Central finite differences, used to verify the tape's gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from app.numcore.tensor import Tensor, backward

ScalarFn = Callable[[Tensor], Union[Tensor, float]]


def _scalar(value: Union[Tensor, float]) -> float:
    return value.item() if isinstance(value, Tensor) else float(value)


def finite_difference_grad(
    f: ScalarFn,
    x: Union[Tensor, np.ndarray],
    h: float = 1e-5,
    indices: Optional[Sequence[Tuple[int, ...]]] = None,
) -> np.ndarray:
    """Estimate df/dx by (f(x + h e_i) - f(x - h e_i)) / 2h.

    When ``indices`` is given only those coordinates are estimated; the rest stay 0.
    """

    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    coords = indices if indices is not None else list(np.ndindex(base.shape))
    for idx in coords:
        original = base[idx]
        base[idx] = original + h
        plus = _scalar(f(Tensor(base.copy())))
        base[idx] = original - h
        minus = _scalar(f(Tensor(base.copy())))
        base[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def autodiff_grad(f: ScalarFn, x: Union[Tensor, np.ndarray]) -> np.ndarray:
    leaf = Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64), requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor):
        raise TypeError("autodiff_grad needs f to return a Tensor")
    backward(out)
    return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a - b| / max(|a|, |b|, floor)."""

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / scale).max()) if a.size else 0.0


__all__ = ["finite_difference_grad", "autodiff_grad", "relative_error"]
