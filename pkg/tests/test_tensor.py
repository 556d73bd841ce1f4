import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marsseg.errors import ContractError, DimensionError
from marsseg.gradcheck import finite_diff_check
from marsseg.tensor import (
    Tensor,
    concat,
    default_dtype,
    get_default_dtype,
    make_op,
    matmul,
    no_grad,
    unbroadcast,
)


def test_default_dtype_is_float32_and_context_restores():
    assert get_default_dtype() == np.float32
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_rejects_integer_only_dtype_and_empty_extent():
    with pytest.raises(TypeError):
        Tensor(np.zeros(3), dtype=np.int32)
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


def test_integer_input_is_promoted():
    assert Tensor(np.arange(3)).dtype == np.float32


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_matmul_value():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_inner_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_concat_mismatch():
    with pytest.raises(DimensionError):
        concat([Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 2, 4)))], axis=1)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_requires_grad_somewhere():
    with pytest.raises(ContractError):
        Tensor(np.ones(3)).sum().backward()


def test_gradients_accumulate_across_calls():
    x = Tensor([1.0, -2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None


def test_node_with_two_consumers(f64, rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)

    def f(t):
        h = t.sigmoid()
        return (h * h + h.exp()).sum()

    assert finite_diff_check(f, x).passed


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad and y.parents == ()


def test_wrong_backward_is_caught(f64, rng):
    # a deliberately wrong derivative for exp (returns g instead of g * e^x)
    def bad_exp(x):
        return make_op(np.exp(x.data), (x,), lambda g: (g,))

    x = Tensor(rng.standard_normal(5), requires_grad=True)
    report = finite_diff_check(lambda t: bad_exp(t).sum(), x)
    assert not report.passed


def test_power_zero_exponent_has_zero_grad():
    x = Tensor([0.0, 2.0], requires_grad=True)
    (x ** 0.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_sigmoid_is_stable_for_large_inputs():
    out = Tensor([-1000.0, 0.0, 1000.0]).sigmoid().data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(out))


def test_unbroadcast_sums_expanded_axes():
    g = np.ones((2, 3, 4))
    assert unbroadcast(g, (3, 1)).shape == (3, 1)
    np.testing.assert_array_equal(unbroadcast(g, (3, 1)), np.full((3, 1), 8.0))


shapes = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))


@settings(max_examples=40, deadline=None)
@given(shapes)
def test_broadcast_add_gradient_shapes(shape):
    a = Tensor(np.ones(shape), requires_grad=True)
    b = Tensor(np.ones((1, shape[1], 1)), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == a.shape and b.grad.shape == b.shape
    assert b.grad.sum() == pytest.approx(np.prod(shape))


@settings(max_examples=40, deadline=None)
@given(shapes, st.permutations([0, 1, 2]))
def test_reshape_transpose_round_trip(shape, perm):
    x = Tensor(np.arange(np.prod(shape), dtype=np.float64).reshape(shape), requires_grad=True)
    y = x.transpose(tuple(perm)).reshape(-1)
    assert y.shape == (int(np.prod(shape)),)
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(shape))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_batched_matmul_shapes(b, m, k, n):
    a = Tensor(np.ones((b, m, k)), requires_grad=True)
    c = Tensor(np.ones((b, k, n)), requires_grad=True)
    out = matmul(a, c)
    assert out.shape == (b, m, n)
    out.sum().backward()
    assert a.grad.shape == a.shape and c.grad.shape == c.shape


def test_relu_propagates_nan():
    out = Tensor([np.nan, -1.0, 2.0]).relu().data
    assert np.isnan(out[0]) and out[1:].tolist() == [0.0, 2.0]
