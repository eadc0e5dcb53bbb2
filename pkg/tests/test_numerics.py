import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fedisac import numerics as nx
from conftest import central_diff, rand_c, rel_err


def test_cmat_mul_identity_and_j():
    X = np.array([[1 + 2j, 3], [4j, -1]])
    assert np.array_equal(nx.cmat_mul(np.eye(2), X), X)
    assert nx.cmat_mul([[1j]], [[1j]])[0, 0] == -1


def test_cmat_mul_triple_loop_oracle(rng):
    a, b = rand_c(rng, 3, 3), rand_c(rng, 3, 3)
    ref = np.zeros((3, 3), complex)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.allclose(nx.cmat_mul(a, b), ref, rtol=0, atol=1e-12)


def test_cmat_mul_dim_mismatch():
    with pytest.raises(ValueError):
        nx.cmat_mul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_matmul_associative(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (rand_c(rng, 4, 4) + 4 * np.eye(4) for _ in range(3))
    lhs = nx.cmat_mul(nx.cmat_mul(A, B), C)
    rhs = nx.cmat_mul(A, nx.cmat_mul(B, C))
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs) < 1e-10


def test_backward_square():
    val, (g,) = nx.value_and_grad(lambda x: x * x, np.array(3.0))
    assert val == 9.0 and g == 6.0


def test_backward_log2():
    _, (g,) = nx.value_and_grad(lambda x: nx.log2(1.0 + x), np.array(1.0))
    assert abs(g - 1 / (2 * np.log(2))) < 1e-15


def test_backward_requires_scalar():
    tape = nx.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ValueError):
        nx.backward(tape, x * 2.0)
    # a matching seed makes it legal
    (g,) = nx.backward(tape, x * 2.0, seed=np.arange(3.0))
    assert np.array_equal(g, 2 * np.arange(3.0))


def test_backward_detects_cycle():
    tape = nx.Tape()
    x = tape.leaf(np.array(1.0))
    y = x * 2.0
    z = y * 3.0
    y.parents = (z,)   # corrupt the tape
    with pytest.raises(RuntimeError):
        nx.backward(tape, nx.sum(z))


def test_unused_leaf_gets_zero():
    tape = nx.Tape()
    x = tape.leaf(np.array(2.0))
    tape.leaf(np.ones(2))
    g = nx.backward(tape, x * x)
    assert np.array_equal(g[1], np.zeros(2))


# every differentiable op against central differences
OPS = {
    "add": (lambda a, b: nx.sum(a + b * b), 2),
    "sub_neg": (lambda a, b: nx.sum((a - b) * (-a)), 2),
    "mul": (lambda a, b: nx.sum(a * b), 2),
    "div": (lambda a, b: nx.sum(a / (b * b + 1.0)), 2),
    "reciprocal": (lambda a: nx.sum(nx.reciprocal(a * a + 1.0)), 1),
    "sqrt": (lambda a: nx.sum(nx.sqrt(a * a + 1.0)), 1),
    "log2": (lambda a: nx.sum(nx.log2(a * a + 1.0)), 1),
    "leaky": (lambda a: nx.sum(nx.leaky_relu(a) * a), 1),
    "abs2": (lambda a, b: nx.sum(nx.abs2(a, b) * a), 2),
    "mean_axis": (lambda a: nx.sum(nx.mean(a * a, axis=0)), 1),
    "sum_keep": (lambda a: nx.sum(nx.sum(a, axis=1, keepdims=True) * a), 1),
    "matmul": (lambda a, b: nx.sum(nx.abs2(nx.matmul(a, nx.transpose(b, (1, 0))), a[:, :3])), 2),
    "reshape_index": (lambda a: nx.sum(nx.reshape(a, (-1,))[1:4] * 3.0), 1),
    "fancy_index": (lambda a: nx.sum(a[np.array([0, 0, 2]), :] * a[:, :]), 1),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradient_fd(name, rng):
    fn, arity = OPS[name]
    xs = [rng.standard_normal((3, 4)) for _ in range(arity)]
    if name == "leaky":
        xs[0] = np.where(np.abs(xs[0]) < 1e-3, 0.5, xs[0])
    _, grads = nx.value_and_grad(fn, *xs)
    for i in range(arity):
        def f(xi, i=i):
            args = list(xs)
            args[i] = xi
            return nx.value_and_grad(fn, *args)[0]
        fd = central_diff(f, xs[i].copy())
        assert rel_err(grads[i], fd) < 1e-4, name


def test_mlp_loss_gradient_fd(rng):
    W1, b1 = rng.standard_normal((5, 7)), rng.standard_normal(7)
    W2 = rng.standard_normal((7, 2))
    x = rng.standard_normal((4, 5))

    def fn(W1, b1, W2):
        h = nx.leaky_relu(nx.matmul(x, W1) + b1)
        out = nx.matmul(h, W2)
        return nx.mean(nx.log2(1.0 + nx.abs2(out[:, 0], out[:, 1])))

    _, grads = nx.value_and_grad(fn, W1, b1, W2)
    for i, p in enumerate((W1, b1, W2)):
        def f(pi, i=i):
            args = [W1, b1, W2]
            args[i] = pi
            return nx.value_and_grad(fn, *args)[0]
        assert rel_err(grads[i], central_diff(f, p.copy())) < 1e-4


def test_backward_deterministic(rng):
    a = rng.standard_normal((6, 6))
    fn = lambda x: nx.sum(nx.log2(1.0 + nx.abs2(nx.matmul(x, x), x)))  # noqa: E731
    _, g1 = nx.value_and_grad(fn, a)
    _, g2 = nx.value_and_grad(fn, a)
    assert g1[0].tobytes() == g2[0].tobytes()


def test_sgd_examples():
    st_ = nx.OptimizerState(kind="sgd", lr=0.1)
    assert nx.optimizer_step(st_, [np.array(1.0)], [np.array(2.0)])[0] == pytest.approx(0.8, abs=1e-15)
    st0 = nx.OptimizerState(kind="sgd", lr=0.0)
    p = np.array([1.0, -2.0])
    assert np.array_equal(nx.optimizer_step(st0, [p], [np.ones(2)])[0], p)


def test_adam_first_step_hand_oracle():
    lr, eps = 1e-3, 1e-8
    st_ = nx.OptimizerState(kind="adam", lr=lr, eps=eps)
    p = nx.optimizer_step(st_, [np.array(0.5)], [np.array(1.0)])[0]
    # m_hat = 1, v_hat = 1 after bias correction
    assert p == pytest.approx(0.5 - lr * 1.0 / (1.0 + eps), abs=1e-16)
    p2 = nx.optimizer_step(st_, [p], [np.array(1.0)])[0]
    m = 0.9 * 0.1 + 0.1
    v = 0.999 * 0.001 + 0.001
    assert p2 == pytest.approx(p - lr * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + eps), abs=1e-16)


def test_decoupled_weight_decay():
    st_ = nx.OptimizerState(kind="sgd", lr=0.1, weight_decay=0.5)
    assert nx.optimizer_step(st_, [np.array(2.0)], [np.array(0.0)])[0] == pytest.approx(1.9)


def test_nan_gradient_aborts():
    st_ = nx.OptimizerState()
    with pytest.raises(FloatingPointError, match="nan=1"):
        nx.optimizer_step(st_, [np.zeros(2)], [np.array([0.0, np.nan])])


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (4,), elements=st.floats(-10, 10)),
       st.floats(0, 1), st.sampled_from(["sgd", "adam"]))
def test_zero_lr_is_identity(p, wd, kind):
    st_ = nx.OptimizerState(kind=kind, lr=0.0, weight_decay=wd)
    assert np.array_equal(nx.optimizer_step(st_, [p], [np.ones(4)])[0], p)
