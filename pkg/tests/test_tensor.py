import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperl1 import tensor as T
from hyperl1.errors import DomainError, ShapeError, UsageError
from hyperl1.tensor import Tensor

from helpers import check_grad


def test_unary_values():
    assert T.silu(Tensor(0.0)).item() == 0.0
    assert T.silu(Tensor(1.0)).item() == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)
    assert T.relu(Tensor(-3.0)).item() == 0.0
    assert T.elementwise_unary(Tensor([2.0]), "neg").numpy().tolist() == [-2.0]


def test_log_of_nonpositive_is_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.log(Tensor(-1.0))


def test_binary_values():
    np.testing.assert_array_equal(T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).numpy(), [4.0, 6.0])
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    np.testing.assert_array_equal((x * Tensor(np.zeros((3, 4)))).numpy(), 0.0)
    np.testing.assert_array_equal((x - x).numpy(), 0.0)


def test_binary_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_division_by_zero_flags_nonfinite():
    out = Tensor([1.0]) / Tensor([0.0])
    assert out.nonfinite


def test_matmul_examples():
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor([[1.0], [2.0]])).numpy(), [[1.0], [2.0]])
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).numpy().tolist() == [[11.0]]
    A = Tensor([[1.0, 1.0]], requires_grad=True)
    T.matmul(A, Tensor([[2.0], [5.0]])).sum().backward()
    np.testing.assert_array_equal(A.grad, [[2.0, 5.0]])
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_reduce_examples():
    assert T.reduce(Tensor([0.1, 0.1, 0.9, 1.0]), None, "median").item() == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_array_equal(Tensor([[1.0, 2.0], [3.0, 4.0]]).sum(axis=0).numpy(), [4.0, 6.0])
    assert Tensor([-5.0, -2.0, -9.0]).max().item() == -2.0
    with pytest.raises(DomainError):
        Tensor(np.zeros((0, 3))).sum(axis=0)


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).numpy(), [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(Tensor([1000.0, 1000.0])).numpy(), [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3)])).numpy(), [0.25, 0.75], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(xs, c):
    x = np.array(xs)
    p = T.softmax(Tensor(x)).numpy()
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(T.softmax(Tensor(x + c)).numpy(), p, atol=1e-12)


def test_concat_slice_round_trip():
    a, b = np.arange(6.0).reshape(2, 3), np.arange(4.0).reshape(2, 2) + 0.1
    c = T.concat([Tensor(a), Tensor(b)], axis=1)
    np.testing.assert_array_equal(T.slice_axis(c, 0, 3, axis=1).numpy(), a)
    np.testing.assert_array_equal(T.slice_axis(c, 3, 5, axis=1).numpy(), b)
    with pytest.raises(ShapeError):
        T.concat([])
    np.testing.assert_array_equal(T.slice_axis(Tensor([5.0, 6.0, 7.0]), 0, 2).numpy(), [5.0, 6.0])
    with pytest.raises(ShapeError):
        T.slice_axis(Tensor([5.0, 6.0, 7.0]), 1, 4)


def test_backward_examples():
    x = Tensor(0.0, requires_grad=True)
    T.silu(x).backward()
    assert x.grad == pytest.approx(0.5)
    y = Tensor(3.0, requires_grad=True)
    T.square(y).backward()
    assert y.grad == 6.0


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        (x * 2.0).backward()


def test_shared_subexpression_accumulates():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    (y + y * x).backward()  # 2x^2... d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad == pytest.approx(4.0 + 12.0)


def test_topological_order_visits_once():
    x = Tensor(1.0, requires_grad=True)
    y = x * 2.0
    z = y + y * y
    order = T.topological_order(z)
    assert len(order) == len({id(n) for n in order})
    assert order[-1] is z


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad


def test_broadcast_gradient_shapes():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.shape == (3, 4) and b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, 3.0)


def test_determinism():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 6))
    outs = [T.softmax(T.silu(Tensor(x)) @ Tensor(x.T), axis=0).numpy() for _ in range(2)]
    np.testing.assert_array_equal(outs[0], outs[1])


# ------------------------------------------------------------ finite differences
UNARY = ["silu", "sigmoid", "exp", "square", "softplus", "neg"]


@pytest.mark.parametrize("f", UNARY)
def test_unary_gradients(f):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=(5,))
        check_grad(lambda t: T.elementwise_unary(t, f).sum(), x, rtol=1e-5)


def test_positive_domain_gradients():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.uniform(0.5, 3.0, size=5)
        check_grad(lambda t: T.log(t).sum(), x, rtol=1e-5)
        check_grad(lambda t: T.sqrt(t).sum(), x, rtol=1e-5)


def test_relu_gradient_away_from_kink():
    x = np.array([-2.0, -0.5, 0.7, 3.0])
    check_grad(lambda t: T.relu(t).sum(), x, rtol=1e-5)


@pytest.mark.parametrize("f", ["add", "sub", "mul", "div"])
def test_binary_gradients(f):
    rng = np.random.default_rng(2)
    w = rng.normal(size=(3, 4))
    for _ in range(10):
        b = rng.uniform(0.5, 2.0, size=4) * rng.choice([-1, 1], size=4)
        a = rng.normal(size=(3, 4))
        check_grad(lambda t: (T.elementwise_binary(t, Tensor(b), f) * w).sum(), a, rtol=1e-5)
        check_grad(lambda t: (T.elementwise_binary(Tensor(a), t, f) * w).sum(), b, rtol=1e-5)


def test_matmul_gradient_batched():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    w = rng.normal(size=(2, 3, 5))
    check_grad(lambda t: (T.matmul(t, Tensor(b)) * w).sum(), a, rtol=1e-5)
    check_grad(lambda t: (T.matmul(Tensor(a), t) * w).sum(), b, rtol=1e-5)


@pytest.mark.parametrize("f", ["sum", "mean", "max", "min", "median"])
@pytest.mark.parametrize("axis", [None, 0, 1])
def test_reduce_gradients(f, axis):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 5))  # distinct entries keep max/min/median differentiable
    w = rng.normal(size=np.asarray(getattr(np, f)(x, axis=axis)).shape)
    check_grad(lambda t: (T.reduce(t, axis, f) * w).sum(), x, rtol=1e-5)


def test_softmax_and_structural_gradients():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    check_grad(lambda t: (T.softmax(t, axis=1) * w).sum(), x, rtol=1e-5)
    check_grad(lambda t: (T.transpose(t, (1, 0)) * w.T).sum(), x, rtol=1e-5)
    check_grad(lambda t: (T.reshape(t, (12,)) * w.ravel()).sum(), x, rtol=1e-5)
    check_grad(lambda t: (T.concat([t, t * 2.0], axis=0) * np.vstack([w, w])).sum(), x, rtol=1e-5)
    check_grad(lambda t: (T.slice_axis(t, 1, 3, axis=1) * w[:, 1:3]).sum(), x, rtol=1e-5)
    check_grad(lambda t: (T.stack([t, t], axis=0) * np.stack([w, -w])).sum() + (t * w).sum(), x, rtol=1e-5)
    check_grad(lambda t: (T.broadcast_to(T.reshape(t, (1, 3, 4)), (2, 3, 4)) * w).sum(), x, rtol=1e-5)
    check_grad(lambda t: (t[1:, ::2] * w[1:, ::2]).sum(), x, rtol=1e-5)
