"""Differentiable operations over :class:`Tensor`.

Broadcasting is limited to two cases: a 1-D bias added across the rows of a
2-D tensor, and a 0-d scalar combined with a tensor of any shape.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from app.numcore.tensor import ShapeError, Tensor, make_result

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    # row bias: (m, n) -> (n,)
    return grad.sum(axis=0)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.data.ndim == 2 and a.data.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return make_result(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return make_result(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return make_result(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    if b.shape != () and b.shape != a.shape:
        raise ShapeError(f"div: divisor must be scalar or match {a.shape}, got {b.shape}")
    out = a.data / b.data
    return make_result(
        "div",
        (a, b),
        out,
        lambda g: (g / b.data, _unbroadcast(-g * out / b.data, b.shape)),
    )


def square(x: Tensor) -> Tensor:
    return make_result("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make_result(
        "matmul",
        (a, b),
        a.data @ b.data,
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {x.shape}")
    return make_result("transpose", (x,), x.data.T.copy(), lambda g: (g.T,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return make_result("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def total(x: Tensor) -> Tensor:
    return make_result("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.full(x.shape, float(g)),))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum of ``weights * x`` with constant weights."""

    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} do not match {x.shape}")
    return make_result("weighted_sum", (x,), np.asarray((w * x.data).sum()), lambda g: (float(g) * w,))


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean over the rows of a 2-D tensor."""

    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_rows needs a non-empty 2-D tensor, got {x.shape}")
    rows = x.shape[0]
    return make_result(
        "mean_rows",
        (x,),
        x.data.mean(axis=0),
        lambda g: (np.broadcast_to(g / rows, x.shape).copy(),),
    )


def mean_of(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of same-shaped tensors."""

    if not tensors:
        raise ShapeError("mean_of needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"mean_of: shape {t.shape} differs from {shape}")
    n = len(tensors)
    stacked = np.stack([t.data for t in tensors])
    return make_result(
        "mean_of",
        tuple(tensors),
        stacked.mean(axis=0),
        lambda g: tuple(g / n for _ in range(n)),
    )


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient is zero wherever the clip is saturated."""

    inside = (x.data >= lo) & (x.data <= hi)
    return make_result("clamp", (x,), np.clip(x.data, lo, hi), lambda g: (g * inside,))


def slice2d(x: Tensor, rows: Tuple[int, int], cols: Tuple[int, int]) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice2d needs a 2-D tensor, got {x.shape}")
    r0, r1 = rows
    c0, c1 = cols
    if not (0 <= r0 <= r1 <= x.shape[0] and 0 <= c0 <= c1 <= x.shape[1]):
        raise ShapeError(f"slice2d: rows {rows} cols {cols} out of range for {x.shape}")

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros(x.shape)
        full[r0:r1, c0:c1] = g
        return (full,)

    return make_result("slice2d", (x,), x.data[r0:r1, c0:c1].copy(), _backward)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    widths = {t.shape[1] for t in tensors}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(widths)}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])
    return make_result(
        "concat_rows",
        tuple(tensors),
        np.concatenate([t.data for t in tensors], axis=0),
        lambda g: tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(tensors))),
    )


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    heights = {t.shape[0] for t in tensors}
    if len(heights) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(heights)}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])
    return make_result(
        "concat_cols",
        tuple(tensors),
        np.concatenate([t.data for t in tensors], axis=1),
        lambda g: tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors))),
    )


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    index = np.asarray(ids, dtype=np.int64)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros(table.shape)
        np.add.at(full, index, g)
        return (full,)

    return make_result("gather_rows", (table,), table.data[index].copy(), _backward)


def softmax_rows(x: Tensor, bias: Optional[np.ndarray] = None) -> Tensor:
    """Row softmax, stabilized by the row max.

    ``bias`` is a constant added before normalization; ``-inf`` entries mask keys out.
    """

    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got {x.shape}")
    logits = x.data if bias is None else x.data + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return make_result("softmax_rows", (x,), p, _backward)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last dimension, then apply ``gain`` and ``bias``."""

    n = x.shape[-1]
    if n < 1 or gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layernorm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, n)
        return dx, (flat_g * xhat.reshape(-1, n)).sum(axis=0), flat_g.sum(axis=0)

    return make_result("layernorm", (x, gain, bias), xhat * gain.data + bias.data, _backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""

    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return make_result("gelu", (x,), 0.5 * x.data * (1.0 + t), _backward)


def cross_entropy(logits: Tensor, positions: Sequence[int], targets: Sequence[int]) -> Tensor:
    """Mean next-token cross-entropy of ``logits[positions]`` against ``targets``."""

    if len(positions) != len(targets) or not positions:
        raise ShapeError("cross_entropy needs matching, non-empty positions and targets")
    rows = np.asarray(positions, dtype=np.int64)
    cols = np.asarray(targets, dtype=np.int64)
    picked = logits.data[rows]
    shifted = picked - picked.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[np.arange(len(rows)), cols]
    count = len(rows)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        probs = np.exp(shifted - log_z[:, None])
        probs[np.arange(count), cols] -= 1.0
        full = np.zeros(logits.shape)
        np.add.at(full, rows, probs * (float(g) / count))
        return (full,)

    return make_result("cross_entropy", (logits,), np.asarray(nll.mean()), _backward)


__all__ = [
    "LN_EPS",
    "add",
    "sub",
    "mul",
    "div",
    "square",
    "matmul",
    "transpose",
    "reshape",
    "total",
    "weighted_sum",
    "mean_rows",
    "mean_of",
    "clamp",
    "slice2d",
    "concat_rows",
    "concat_cols",
    "gather_rows",
    "softmax_rows",
    "layernorm",
    "gelu",
    "cross_entropy",
]
