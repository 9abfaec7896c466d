import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matnet import tensor as T
from matnet.tensor import NumericError, ShapeError, Tape

from conftest import gradient_error

dims = st.integers(1, 6)


def test_matmul_identity_and_hand_product():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(np.eye(2), A), A)
    assert np.array_equal(T.matmul(A, np.array([[5.0], [6.0]])), [[17.0], [39.0]])


def test_matmul_shape_error_carries_both_shapes():
    with pytest.raises(ShapeError) as info:
        T.matmul(np.ones((2, 3)), np.ones((2, 2)))
    assert "(2, 3)" in str(info.value) and "(2, 2)" in str(info.value)


def test_elementwise_examples():
    assert np.array_equal(T.elementwise("hadamard", np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])), [[3.0, 8.0]])
    assert np.array_equal(T.elementwise("sigmoid", np.zeros((2, 3))), np.full((2, 3), 0.5))
    assert np.array_equal(T.elementwise("relu", np.array([[-1.0, 2.0]])), [[0.0, 2.0]])
    assert np.array_equal(T.elementwise("scale", np.ones((1, 2)), factor=3.0), [[3.0, 3.0]])
    with pytest.raises(ShapeError):
        T.elementwise("add", np.ones((2, 2)), np.ones((2, 1)))


def test_relu_subgradient_at_zero_is_zero():
    tape = Tape()
    x = tape.var(np.zeros((1, 3)))
    tape.backward(T.sum_all(T.relu(x)))
    assert np.array_equal(x.grad, np.zeros((1, 3)))


def test_row_softmax_examples():
    assert np.allclose(T.row_softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]], atol=1e-15)
    assert np.allclose(T.row_softmax(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]], atol=1e-15)
    assert np.allclose(T.row_softmax(np.array([[0.0, np.log(3.0)]])), [[0.25, 0.75]], atol=1e-15)
    with pytest.raises(NumericError):
        T.row_softmax(np.array([[np.nan, 0.0]]))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 7), st.floats(-50, 50), st.integers(0, 2**32 - 1))
def test_row_softmax_rows_sum_to_one_and_shift_invariant(rows, cols, c, seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(rows, cols))
    y = T.row_softmax(x)
    assert np.abs(y.sum(axis=1) - 1.0).max() <= 1e-12
    assert np.abs(T.row_softmax(x + c) - y).max() <= 1e-12


def test_vectorize_row_major_and_errors():
    v = T.vectorize(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert v.shape == (4, 1) and np.array_equal(v.ravel(), [1, 2, 3, 4])
    with pytest.raises(ShapeError):
        T.matrixize(np.ones((6, 1)), 2, 2)


@given(dims, dims, st.integers(0, 2**32 - 1))
def test_vectorize_matrixize_round_trip_is_bitwise(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols))
    back = T.matrixize(T.vectorize(x), rows, cols)
    assert back.tobytes() == x.tobytes()


def test_round_trip_5x7(rng):
    x = rng.standard_normal((5, 7))
    assert np.array_equal(T.matrixize(T.vectorize(x), 5, 7), x)


@settings(max_examples=50, deadline=None)
@given(dims, dims, dims, dims, st.integers(0, 2**32 - 1))
def test_matmul_associative(a, b, c, d, seed):
    r = np.random.default_rng(seed)
    A, B, C = r.standard_normal((a, b)), r.standard_normal((b, c)), r.standard_normal((c, d))
    left = T.matmul(T.matmul(A, B), C)
    right = T.matmul(A, T.matmul(B, C))
    scale = max(1.0, np.abs(left).max())
    assert np.abs(left - right).max() <= 1e-9 * scale


def test_backward_quadratic(rng):
    tape = Tape()
    X = rng.standard_normal((3, 4))
    x = tape.var(X)
    tape.backward(T.sum_all(T.hadamard(x, x)))
    assert np.allclose(x.grad, 2 * X, atol=1e-14)


def test_backward_bilinear_matches_closed_form_and_fd(rng):
    U, V, X = rng.standard_normal((3, 2)), rng.standard_normal((4, 5)), rng.standard_normal((3, 4))
    tape = Tape()
    x = tape.var(X)
    tape.backward(T.sum_all(T.matmul(T.matmul(T.transpose(U), x), V)))
    closed = U.sum(axis=1, keepdims=True) @ V.sum(axis=1, keepdims=True).T
    assert np.allclose(x.grad, closed, atol=1e-12)
    fd = T.finite_difference_gradient(lambda z: T.sum_all(U.T @ z @ V), X)
    assert T.relative_error(x.grad, fd) <= 1e-6


def test_constant_loss_gives_zero_gradients(rng):
    tape = Tape()
    x = tape.var(rng.standard_normal((2, 2)))
    c = tape.var(np.ones((1, 1)))
    tape.backward(T.sum_all(c))
    assert np.array_equal(x.grad, np.zeros((2, 2)))


def test_backward_rejects_non_scalar_loss():
    tape = Tape()
    x = tape.var(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        tape.backward(T.scale(x, 2.0))


def test_tape_is_topologically_ordered(rng):
    tape = Tape()
    a = tape.var(rng.standard_normal((2, 2)))
    b = T.tanh(T.matmul(a, a))
    T.sum_all(T.add(b, a))
    position = {id(n): k for k, n in enumerate(tape.nodes)}
    for k, node in enumerate(tape.nodes):
        for parent in node.parents:
            if isinstance(parent, T.Var):
                assert position[id(parent)] < k


def test_finite_difference_oracles(rng):
    x = rng.standard_normal((3, 2))
    assert np.abs(T.finite_difference_gradient(lambda z: z.sum(), x) - 1.0).max() <= 1e-9
    assert np.abs(T.finite_difference_gradient(lambda z: (z * z).sum(), np.array([[1.0]])) - 2.0).max() <= 1e-8


def test_backward_agrees_with_fd_on_mat1_relu(rng):
    params = {"X": rng.standard_normal((4, 3)), "U": rng.standard_normal((4, 2)),
              "V": rng.standard_normal((3, 5)), "B": rng.standard_normal((2, 5))}

    def loss(p):
        y = T.relu(T.add(T.matmul(T.matmul(T.transpose(p["U"]), p["X"]), p["V"]), p["B"]))
        return T.sum_all(T.hadamard(y, y))

    assert gradient_error(loss, params) <= 1e-4


@pytest.mark.parametrize("op", ["sigmoid", "tanh", "exp", "abs_", "row_softmax"])
def test_unary_gradients(op, rng):
    x = {"x": rng.standard_normal((3, 4)) + (3.0 if op == "abs_" else 0.0)}
    w = rng.standard_normal((3, 4))
    fn = getattr(T, op)
    assert gradient_error(lambda p: T.sum_all(T.hadamard(fn(p["x"]), w)), x) <= 1e-4


def test_masked_softmax_gradient_and_empty_rows(rng):
    mask = np.array([[True, False, True], [False, False, False], [True, True, True]])
    w = rng.standard_normal((3, 3))
    y = T.masked_row_softmax(rng.standard_normal((3, 3)), mask)
    assert np.array_equal(y[1], np.zeros(3)) and np.all(y[~mask] == 0)
    err = gradient_error(lambda p: T.sum_all(T.hadamard(T.masked_row_softmax(p["a"], mask), w)),
                         {"a": rng.standard_normal((3, 3))})
    assert err <= 1e-4


def test_batched_bias_broadcast_reduces_gradient(rng):
    tape = Tape()
    B = tape.var(np.zeros((2, 3)))
    tape.backward(T.sum_all(T.add(rng.standard_normal((5, 2, 3)), B)))
    assert np.array_equal(B.grad, np.full((2, 3), 5.0))


def test_reshape_concat_take_rows_gradients(rng):
    idx = np.array([2, 0, 2])

    def loss(p):
        z = T.concat([p["a"], p["b"]], axis=1)
        z = T.take_rows(z, idx)
        return T.sum_all(T.hadamard(T.reshape(z, (3 * 5, 1)), T.reshape(z, (15, 1))))

    assert gradient_error(loss, {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal((3, 3))}) <= 1e-4


def test_ndarray_operator_var_dispatch(rng):
    tape = Tape()
    x = tape.var(rng.standard_normal((2, 2)))
    A = rng.standard_normal((2, 2))
    y = A @ x + 1.0 - x * 2.0
    assert isinstance(y, T.Var)
    assert np.allclose(y.value, A @ x.value + 1.0 - 2.0 * x.value)
