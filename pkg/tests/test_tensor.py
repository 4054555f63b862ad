"""Primitive-level tests: forward examples plus finite-difference gradients."""

import numpy as np
import pytest

from gghm import tensor as T
from gghm.errors import DimensionError
from gghm.gradcheck import grad_check
from gghm.tensor import Parameter, Tensor

RNG = np.random.default_rng(20240811)


def param(shape, name="p", scale=1.0, rng=RNG):
    return Parameter(scale * rng.standard_normal(shape), name, dtype=np.float64)


# -- forward examples ----------------------------------------------------------


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[2.0, 3.0], [4.0, 5.0]])
    assert np.array_equal(T.matmul(eye, m).data, m.data)


def test_matmul_by_hand():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0], [4.0]])
    assert T.matmul(a, b).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_associative_with_identity():
    rng = np.random.default_rng(7)
    a = Tensor(rng.standard_normal((4, 4)))
    b = Tensor(rng.standard_normal((4, 4)))
    c = Tensor(rng.standard_normal((4, 4)))
    left = T.matmul(T.matmul(a, b), c).data
    right = T.matmul(a, T.matmul(b, c)).data
    assert np.allclose(left, right, atol=1e-6)
    eye = Tensor(np.eye(4))
    assert np.allclose(T.matmul(a, eye).data, a.data, atol=1e-12)


def test_relu_examples():
    x = Tensor([-1.0, 0.0, 2.0])
    assert T.relu(x).data.tolist() == [0.0, 0.0, 2.0]
    neg = Tensor([-3.0, -0.5])
    assert np.array_equal(T.relu(neg).data, np.zeros(2))


def test_relu_gradient_mask():
    x = Parameter(np.array([-1.0, 0.0, 2.0]), "x", dtype=np.float64)
    T.sum_(T.relu(x)).backward()
    assert x.grad.tolist() == [0.0, 0.0, 1.0]  # subgradient at 0 is 0


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    y = T.softmax(Tensor(rng.standard_normal((5, 7))), axis=-1)
    assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)


def test_cross_entropy_uniform_logits():
    loss = T.softmax_cross_entropy(Tensor(np.zeros((3, 5))), np.zeros(3, dtype=int))
    assert np.isclose(float(loss.data), np.log(5.0))


def test_cross_entropy_confident_closed_form():
    loss = T.softmax_cross_entropy(Tensor([[10.0, -10.0]]), np.array([0]))
    assert np.isclose(float(loss.data), np.log1p(np.exp(-20.0)), rtol=1e-6)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    logits = Parameter(np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]]), "l",
                       dtype=np.float64)
    targets = np.array([1, 2])
    T.softmax_cross_entropy(logits, targets).backward()
    p = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    onehot = np.zeros_like(p)
    onehot[np.arange(2), targets] = 1.0
    assert np.allclose(logits.grad, (p - onehot) / 2, atol=1e-12)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        T.softmax_cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))


def test_cross_entropy_nonnegative():
    rng = np.random.default_rng(5)
    for _ in range(20):
        logits = Tensor(rng.standard_normal((4, 6)))
        targets = rng.integers(0, 6, size=4)
        assert float(T.softmax_cross_entropy(logits, targets).data) >= 0.0


def test_forward_determinism_bitwise():
    def run():
        rng = np.random.default_rng(99)
        x = Tensor(rng.standard_normal((8, 8)))
        w = Tensor(rng.standard_normal((8, 8)))
        return T.softmax(T.matmul(T.relu(x), w), axis=-1).data
    assert np.array_equal(run(), run())


def test_min_routes_gradient_to_argmin():
    x = Parameter(np.array([[3.0, 1.0, 2.0]]), "x", dtype=np.float64)
    T.sum_(T.min_(x, axis=1)).backward()
    assert x.grad.tolist() == [[0.0, 1.0, 0.0]]


def test_sort_last_orders_and_routes_gradient():
    x = Parameter(np.array([[3.0, 1.0, 2.0]]), "x", dtype=np.float64)
    y = T.sort_last(x)
    assert y.data.tolist() == [[1.0, 2.0, 3.0]]
    T.sum_(T.mul(y, Tensor(np.array([1.0, 10.0, 100.0])))).backward()
    assert x.grad.tolist() == [[100.0, 1.0, 10.0]]


# -- gradients against finite differences ---------------------------------------

N_TRIALS = 100


def _trial_rng():
    return np.random.default_rng(12345)


def _off_kink(x, margin=0.05):
    """Shift values away from 0 so finite differences never straddle a kink."""
    return x + np.sign(x) * margin


@pytest.mark.parametrize("name", [
    "add", "sub", "mul", "div", "matmul", "relu", "leaky_relu", "sigmoid",
    "abs", "sqrt", "exp", "log", "pow", "softmax", "cross_entropy", "sum",
    "mean", "min", "sort", "concat", "take", "pairwise_euclidean",
    "pairwise_cosine", "slice", "repeat", "expand",
])
def test_primitive_gradients_match_finite_differences(name):
    rng = _trial_rng()
    worst = 0.0
    for _ in range(N_TRIALS):
        a = Parameter(rng.standard_normal((2, 3)), "a", dtype=np.float64)
        b = Parameter(rng.standard_normal((2, 3)), "b", dtype=np.float64)
        if name == "add":
            f = lambda: T.sum_(T.add(a, b))
        elif name == "sub":
            f = lambda: T.sum_(T.mul(T.sub(a, b), b))
        elif name == "mul":
            f = lambda: T.sum_(T.mul(a, b))
        elif name == "div":
            bpos = Parameter(1.5 + rng.random((2, 3)), "b", dtype=np.float64)
            b = bpos
            f = lambda: T.sum_(T.div(a, bpos))
        elif name == "matmul":
            b = Parameter(rng.standard_normal((3, 4)), "b", dtype=np.float64)
            f = lambda: T.sum_(T.matmul(a, b))
        elif name == "relu":
            a = Parameter(_off_kink(a.data), "a", dtype=np.float64)
            ar = a
            f = lambda: T.sum_(T.mul(T.relu(ar), b))
        elif name == "leaky_relu":
            a = Parameter(_off_kink(a.data), "a", dtype=np.float64)
            al = a
            f = lambda: T.sum_(T.mul(T.leaky_relu(al, 0.01), b))
        elif name == "sigmoid":
            f = lambda: T.sum_(T.mul(T.sigmoid(a), b))
        elif name == "abs":
            a = Parameter(_off_kink(a.data), "a", dtype=np.float64)
            aa = a
            f = lambda: T.sum_(T.mul(T.abs_(aa), b))
        elif name == "sqrt":
            apos = Parameter(0.5 + rng.random((2, 3)), "a", dtype=np.float64)
            a = apos
            f = lambda: T.sum_(T.mul(T.sqrt(apos), b))
        elif name == "exp":
            f = lambda: T.sum_(T.mul(T.exp(a), b))
        elif name == "log":
            apos = Parameter(0.5 + rng.random((2, 3)), "a", dtype=np.float64)
            a = apos
            f = lambda: T.sum_(T.mul(T.log(apos), b))
        elif name == "pow":
            apos = Parameter(0.5 + rng.random((2, 3)), "a", dtype=np.float64)
            a = apos
            f = lambda: T.sum_(T.mul(T.pow_scalar(apos, -0.5), b))
        elif name == "softmax":
            f = lambda: T.sum_(T.mul(T.softmax(a, axis=-1), b))
        elif name == "cross_entropy":
            tgt = rng.integers(0, 3, size=2)
            f = lambda: T.softmax_cross_entropy(a, tgt)
        elif name == "sum":
            f = lambda: T.sum_(T.mul(T.sum_(a, axis=0, keepdims=True), b))
        elif name == "mean":
            f = lambda: T.sum_(T.mul(T.mean(a, axis=1, keepdims=True), b))
        elif name == "min":
            spaced = np.stack([rng.permutation(3) + 0.2 * rng.random(3)
                               for _ in range(2)])
            a = Parameter(spaced, "a", dtype=np.float64)
            am = a
            f = lambda: T.sum_(T.mul(T.min_(am, axis=1), Tensor(np.array([1.0, 2.0]))))
        elif name == "sort":
            spaced = np.stack([rng.permutation(3) + 0.2 * rng.random(3)
                               for _ in range(2)])
            a = Parameter(spaced, "a", dtype=np.float64)
            asrt = a
            f = lambda: T.sum_(T.mul(T.sort_last(asrt), b))
        elif name == "concat":
            wc = Tensor(rng.standard_normal((2, 6)))
            f = lambda: T.sum_(T.mul(T.concat([a, b], axis=1), wc))
        elif name == "take":
            idx = rng.integers(0, 2, size=4)
            f = lambda: T.sum_(T.take(a, idx, axis=0))
        elif name == "pairwise_euclidean":
            b = Parameter(rng.standard_normal((4, 3)), "b", dtype=np.float64)
            f = lambda: T.sum_(T.pairwise_distance(a, b, "euclidean"))
        elif name == "pairwise_cosine":
            b = Parameter(rng.standard_normal((4, 3)), "b", dtype=np.float64)
            f = lambda: T.sum_(T.pairwise_distance(a, b, "one_minus_cosine"))
        elif name == "slice":
            ws = Tensor(rng.standard_normal((2, 2)))
            f = lambda: T.sum_(T.mul(T.slice_axis(a, 1, 0, 2), ws))
        elif name == "repeat":
            wr = Tensor(rng.standard_normal((3, 2, 3)))
            f = lambda: T.sum_(T.mul(T.repeat_leading(a, 3), wr))
        elif name == "expand":
            we = Tensor(rng.standard_normal((2, 4, 3)))
            f = lambda: T.sum_(T.mul(T.expand_axis(a, 1, 4), we))
        else:
            raise AssertionError(name)
        worst = max(worst, grad_check(f, [a, b] if b.requires_grad else [a]))
    assert worst < 1e-4, f"{name}: worst FD error {worst}"


def test_grad_check_exact_for_linear_function():
    rng = np.random.default_rng(0)
    a = Parameter(rng.standard_normal((3, 3)), "a", dtype=np.float64)
    c = Tensor(rng.standard_normal((3, 3)))
    err = grad_check(lambda: T.sum_(T.mul(a, c)), [a])
    assert err < 1e-10


def test_broadcast_backward_shapes():
    a = Parameter(np.ones((4, 3)), "a", dtype=np.float64)
    b = Parameter(np.ones(3), "b", dtype=np.float64)
    T.sum_(T.mul(a, b)).backward()
    assert a.grad.shape == (4, 3)
    assert b.grad.shape == (3,)
    assert np.array_equal(b.grad, np.full(3, 4.0))


def test_no_grad_blocks_graph():
    a = Parameter(np.ones(3), "a", dtype=np.float64)
    with T.no_grad():
        out = T.sum_(T.mul(a, a))
    assert not out.requires_grad
    assert out._backward is None
