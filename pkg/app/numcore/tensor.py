"""Dense float64 tensors recorded on a per-forward tape for reverse-mode autodiff."""
from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised on misuse of the tape (recording on or combining a consumed graph, double backward)."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite or degenerate values."""


_CHECK_FINITE: contextvars.ContextVar[bool] = contextvars.ContextVar("check_finite", default=False)


@contextmanager
def checked() -> Iterator[None]:
    """Verify every op output is finite while the context is active."""

    token = _CHECK_FINITE.set(True)
    try:
        yield
    finally:
        _CHECK_FINITE.reset(token)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union["Tensor", float, int]


@dataclass
class Node:
    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    backward: BackwardFn


class Graph:
    """Append-only tape. Nodes are recorded in execution order, so the list is topological."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> int:
        if self.consumed:
            raise GraphError("graph already consumed by backward(); run a fresh forward pass")
        self.nodes.append(node)
        return len(self.nodes) - 1

    def absorb(self, other: "Graph") -> None:
        """Append another live tape. Independent tapes share no intermediates, so order stays topological."""

        if other.consumed or self.consumed:
            raise GraphError("cannot combine a graph already consumed by backward()")
        for node in other.nodes:
            node.output.graph = self
            self.nodes.append(node)
        other.nodes.clear()
        other.consumed = True

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise GraphError("backward() called twice on the same graph")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            node.output.grad = upstream
            for tensor, grad in zip(node.inputs, node.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.graph is None:
                    tensor.grad = grad if tensor.grad is None else tensor.grad + grad
                else:
                    key = id(tensor)
                    grads[key] = grad if key not in grads else grads[key] + grad
        self.nodes.clear()
        self.consumed = True


class Tensor:
    """A float64 array that optionally participates in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "graph")

    def __init__(self, data: object, requires_grad: bool = False) -> None:
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.graph: Optional[Graph] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":
        from app.numcore import ops

        return ops.transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def reshape(self, *shape: int) -> "Tensor":
        from app.numcore import ops

        return ops.reshape(self, shape)

    def sum(self) -> "Tensor":
        from app.numcore import ops

        return ops.total(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: Operand) -> "Tensor":
        from app.numcore import ops

        return ops.add(self, as_tensor(other))

    def __radd__(self, other: Operand) -> "Tensor":
        from app.numcore import ops

        return ops.add(as_tensor(other), self)

    def __sub__(self, other: Operand) -> "Tensor":
        from app.numcore import ops

        return ops.sub(self, as_tensor(other))

    def __rsub__(self, other: Operand) -> "Tensor":
        from app.numcore import ops

        return ops.sub(as_tensor(other), self)

    def __mul__(self, other: Operand) -> "Tensor":
        from app.numcore import ops

        return ops.mul(self, as_tensor(other))

    def __rmul__(self, other: Operand) -> "Tensor":
        from app.numcore import ops

        return ops.mul(as_tensor(other), self)

    def __truediv__(self, other: Operand) -> "Tensor":
        from app.numcore import ops

        return ops.div(self, as_tensor(other))

    def __neg__(self) -> "Tensor":
        from app.numcore import ops

        return ops.mul(self, as_tensor(-1.0))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from app.numcore import ops

        return ops.matmul(self, other)


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(float(value))


def make_result(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    """Wrap an op's output and record it on the tape when any input needs gradients."""

    if _CHECK_FINITE.get() and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if not any(t.requires_grad for t in inputs):
        return out
    graphs = list({id(t.graph): t.graph for t in inputs if t.graph is not None}.values())
    if graphs:
        graph = max(graphs, key=len)
        for other in graphs:
            if other is not graph:
                graph.absorb(other)
    else:
        graph = Graph()
    out.requires_grad = True
    out.graph = graph
    graph.record(Node(op=op, inputs=tuple(inputs), output=out, backward=backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into every requires_grad tensor reachable from ``loss``."""

    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.graph is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return
        raise GraphError("loss does not depend on any tensor with requires_grad=True")
    loss.graph.backward(loss)


__all__ = [
    "Tensor",
    "Graph",
    "Node",
    "ShapeError",
    "GraphError",
    "NumericError",
    "as_tensor",
    "backward",
    "checked",
    "make_result",
]
