from typing import Callable

import numpy as np
import pytest

from app.numcore import (
    GraphError,
    NumericError,
    ShapeError,
    Tensor,
    autodiff_grad,
    backward,
    checked,
    finite_difference_grad,
    ops,
    relative_error,
)
from app.models.toy_decoder import causal_bias


def assert_grad_matches(f: Callable[[Tensor], Tensor], x: np.ndarray, tol: float = 1e-5) -> None:
    analytic = autodiff_grad(f, x)
    numeric = finite_difference_grad(f, x)
    assert relative_error(analytic, numeric, floor=1e-4) < tol


def test_matmul_and_transpose_gradients() -> None:
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(3, 4)))
    assert_grad_matches(lambda x: ops.total(ops.square(ops.matmul(x, w))), rng.normal(size=(2, 3)))
    assert_grad_matches(lambda x: ops.total(ops.transpose(x) * 2.0), rng.normal(size=(2, 3)))


def test_softmax_with_causal_bias_gradient() -> None:
    rng = np.random.default_rng(1)
    weights = rng.normal(size=(4, 4))
    bias = causal_bias(4)
    assert_grad_matches(lambda x: ops.weighted_sum(ops.softmax_rows(x, bias=bias), weights), rng.normal(size=(4, 4)))


def test_softmax_rows_sum_to_one_and_mask_future() -> None:
    p = ops.softmax_rows(Tensor(np.zeros((3, 3))), bias=causal_bias(3)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert p[0, 1] == 0.0 and p[0, 2] == 0.0 and p[1, 2] == 0.0


def test_layernorm_and_gelu_gradients() -> None:
    rng = np.random.default_rng(2)
    gain = Tensor(rng.normal(size=5))
    bias = Tensor(rng.normal(size=5))
    weights = rng.normal(size=(3, 5))
    assert_grad_matches(lambda x: ops.weighted_sum(ops.layernorm(x, gain, bias), weights), rng.normal(size=(3, 5)))
    assert_grad_matches(lambda x: ops.weighted_sum(ops.gelu(x), weights), rng.normal(size=(3, 5)))


def test_layernorm_parameter_gradients() -> None:
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(3, 5)))
    bias = Tensor(np.zeros(5))
    weights = rng.normal(size=(3, 5))
    assert_grad_matches(lambda g: ops.weighted_sum(ops.layernorm(x, g, bias), weights), rng.normal(size=5))


def test_cross_entropy_gradient_and_positivity() -> None:
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(5, 7))
    f = lambda x: ops.cross_entropy(x, [1, 3, 4], [0, 6, 2])  # noqa: E731
    assert f(Tensor(logits)).item() > 0.0
    assert_grad_matches(f, logits)


def test_slicing_concat_gather_gradients() -> None:
    rng = np.random.default_rng(5)
    weights = rng.normal(size=(5, 2))

    def f(x: Tensor) -> Tensor:
        top = ops.slice2d(x, (0, 2), (1, 3))
        rows = ops.gather_rows(x, [3, 3, 0])
        stacked = ops.concat_rows([top, ops.slice2d(rows, (0, 3), (0, 2))])
        return ops.weighted_sum(stacked, weights)

    assert_grad_matches(f, rng.normal(size=(4, 3)))


def test_clamp_passes_gradient_only_inside() -> None:
    x = Tensor(np.array([-0.5, 0.5, 1.5]), requires_grad=True)
    backward(ops.total(ops.clamp(x, 0.0, 1.0)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_row_bias_broadcast_gradient() -> None:
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(3, 4)))
    weights = rng.normal(size=(3, 4))
    assert_grad_matches(lambda b: ops.weighted_sum(x + b, weights), rng.normal(size=4))


def test_gradients_accumulate_across_reuse() -> None:
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    backward(ops.total(x * x + x))
    np.testing.assert_array_equal(x.grad, [5.0, 7.0])


def test_second_backward_on_same_graph_raises() -> None:
    x = Tensor(np.ones(3), requires_grad=True)
    loss = ops.total(ops.square(x))
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_recording_on_consumed_graph_raises() -> None:
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.square(x)
    backward(ops.total(y))
    with pytest.raises(GraphError):
        ops.total(y)


def test_independent_tapes_are_merged() -> None:
    w = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    left = ops.total(ops.square(w))
    right = ops.total(w * 3.0)
    backward(ops.mean_of([left, right]))
    np.testing.assert_allclose(w.grad, 0.5 * (2.0 * w.data + 3.0))


def test_backward_needs_scalar_and_dependency() -> None:
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ops.square(x))
    with pytest.raises(GraphError):
        backward(Tensor(1.0))


def test_shape_errors() -> None:
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_checked_mode_flags_non_finite() -> None:
    with checked():
        with pytest.raises(NumericError):
            ops.div(Tensor(np.ones(2)), Tensor(0.0))
    ops.div(Tensor(np.ones(2)), Tensor(1.0))
