import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icnn_ot import diffcore as dc
from icnn_ot.diffcore import Activation, Tape, Tensor, backward, finite_diff_grad

SQ = Activation("squared-leaky-relu", 0.2)
LEAKY = Activation("leaky-relu", 0.2)


def scalar_fn(build):
    """Wrap a graph builder ``build(tape, x_var) -> scalar Var`` as a numpy function."""

    def fn(x):
        t = Tape()
        return build(t, t.leaf(x)).value.item()

    return fn


def grad_of(build, x):
    t = Tape()
    v = t.leaf(x)
    return backward(t, build(t, v), [v])[0].data


# -- Tensor ------------------------------------------------------------------


def test_tensor_shape_and_immutability():
    t = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert t.shape == (2, 3)
    assert t.data.size == 6
    with pytest.raises(ValueError):
        t.data[0, 0] = 9.0


@pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf], [[0.0, -np.inf]]])
def test_tensor_rejects_non_finite(bad):
    with pytest.raises(dc.NonFiniteError):
        Tensor(bad)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflowing_op_reports_error():
    t = Tape()
    x = t.leaf([1e200])
    with pytest.raises(dc.NonFiniteError):
        dc.square(x)


# -- matvec ------------------------------------------------------------------


@pytest.mark.parametrize(
    "A, x, expected",
    [
        ([[1, 0], [0, 1]], [3, 4], [3, 4]),
        ([[1, 2], [3, 4]], [1, 1], [3, 7]),
        ([[0, 0]], [5, 6], [0]),
    ],
)
def test_matvec_examples(A, x, expected):
    t = Tape()
    out = dc.matvec(t.const(A), t.const(x))
    np.testing.assert_array_equal(out.value.data, expected)


def test_matvec_shape_mismatch():
    t = Tape()
    with pytest.raises(ValueError, match="shape mismatch"):
        dc.matvec(t.const([[1, 2, 3]]), t.const([1, 2]))


def test_matmul_shape_mismatch():
    t = Tape()
    with pytest.raises(ValueError):
        dc.matmul(t.const(np.ones((2, 3))), t.const(np.ones((2, 3))))
    with pytest.raises(ValueError):
        dc.add(t.const(np.ones(2)), t.const(np.ones(3)))


# -- activations -------------------------------------------------------------


@pytest.mark.parametrize(
    "act, t, value, prime, second",
    [
        (SQ, 3.0, 9.0, 6.0, 2.0),
        (SQ, -5.0, 1.0, -0.4, 0.08),
        (LEAKY, 0.0, 0.0, 1.0, 0.0),
    ],
)
def test_activation_examples(act, t, value, prime, second):
    assert dc.apply_activation(act, [t]).data[0] == pytest.approx(value)
    assert dc.apply_activation_prime(act, [t]).data[0] == pytest.approx(prime)
    assert dc.apply_activation_second(act, [t]).data[0] == pytest.approx(second)


def test_activation_kink_uses_right_branch():
    assert dc.apply_activation_prime(SQ, [0.0]).data[0] == 0.0
    assert dc.apply_activation_second(SQ, [0.0]).data[0] == 2.0
    assert dc.apply_activation_prime(LEAKY, [0.0]).data[0] == 1.0


def test_activation_validation():
    with pytest.raises(ValueError):
        Activation("relu6")
    with pytest.raises(ValueError):
        Activation("leaky-relu", -0.1)
    assert not SQ.nondecreasing and LEAKY.nondecreasing


@settings(max_examples=60, deadline=None)
@given(t=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), beta=st.floats(0.0, 1.0))
def test_activation_derivatives_match_finite_differences(t, beta):
    for kind in Activation.KINDS:
        a = Activation(kind, beta)
        h = 1e-6
        fd1 = (a.value(np.array([t + h])) - a.value(np.array([t - h])))[0] / (2 * h)
        fd2 = (a.prime(np.array([t + h])) - a.prime(np.array([t - h])))[0] / (2 * h)
        assert fd1 == pytest.approx(a.prime(np.array([t]))[0], rel=1e-6, abs=1e-8)
        assert fd2 == pytest.approx(a.second(np.array([t]))[0], rel=1e-6, abs=1e-8)


# -- backward ----------------------------------------------------------------


def test_backward_linear():
    c = np.array([2.0, -1.0])
    g = grad_of(lambda t, x: dc.sum_all(dc.mul(x, t.const(c))), [7.0, -3.0])
    np.testing.assert_allclose(g, [2.0, -1.0])


def test_backward_half_square_norm():
    g = grad_of(lambda t, x: dc.scale(dc.sum_all(dc.square(x)), 0.5), [3.0, 4.0])
    np.testing.assert_allclose(g, [3.0, 4.0])


def test_backward_through_activation():
    g = grad_of(lambda t, x: dc.sum_all(dc.activation(SQ, x)), [3.0])
    np.testing.assert_allclose(g, [6.0])


def test_backward_errors():
    t = Tape()
    with pytest.raises(ValueError, match="empty"):
        backward(t, Tape().leaf([1.0]))
    x = t.leaf([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        backward(t, x)


def test_backward_gradient_shapes_follow_leaves():
    t = Tape()
    W = t.leaf(np.ones((3, 2)))
    x = t.leaf(np.ones((5, 2)))
    b = t.leaf(np.zeros(3))
    out = dc.sum_all(dc.add_row(dc.matmul_t(x, W), b))
    gW, gx, gb = backward(t, out, [W, x, b])
    assert gW.shape == (3, 2) and gx.shape == (5, 2) and gb.shape == (3,)
    np.testing.assert_allclose(gb.data, [5.0, 5.0, 5.0])


def test_unused_leaf_gets_zero_gradient():
    t = Tape()
    x, y = t.leaf([1.0]), t.leaf([2.0, 3.0])
    out = dc.sum_all(dc.square(x))
    gx, gy = backward(t, out, [x, y])
    np.testing.assert_array_equal(gy.data, [0.0, 0.0])


# -- finite differences ------------------------------------------------------


def test_finite_diff_quadratic_and_linear():
    fd = finite_diff_grad(lambda v: 0.5 * float(v @ v), np.array([1.0, 2.0]), 1e-5)
    np.testing.assert_allclose(fd.data, [1.0, 2.0], atol=1e-8)
    c = np.array([0.3, -2.0, 5.0])
    fd = finite_diff_grad(lambda v: float(c @ v), np.zeros(3), 1e-5)
    np.testing.assert_allclose(fd.data, c, atol=1e-9)


def test_finite_diff_rejects_bad_step_and_nonfinite():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda v: 0.0, [1.0], 0.0)
    with pytest.raises(dc.NonFiniteError):
        finite_diff_grad(lambda v: float("nan"), [1.0], 1e-3)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def _batch_graph(op):
    # each builder maps a [2, 3] leaf to a scalar through the named primitive
    W = np.array([[0.3, -1.2, 0.7], [1.1, 0.4, -0.5], [-0.8, 0.9, 0.2]])
    r = np.array([0.5, -1.5, 2.0])
    builders = {
        "matmul": lambda t, x: dc.sum_all(dc.square(dc.matmul(x, t.const(W)))),
        "matmul_t": lambda t, x: dc.sum_all(dc.square(dc.matmul_t(x, t.const(W)))),
        "add": lambda t, x: dc.sum_all(dc.square(dc.add(x, dc.square(x)))),
        "sub": lambda t, x: dc.sum_all(dc.square(dc.sub(dc.scale(x, 3.0), dc.square(x)))),
        "mul": lambda t, x: dc.sum_all(dc.mul(x, dc.square(x))),
        "mul_row": lambda t, x: dc.sum_all(dc.square(dc.mul(x, t.const(r)))),
        "add_row": lambda t, x: dc.sum_all(dc.square(dc.add_row(x, t.const(r)))),
        "mean": lambda t, x: dc.mean(dc.square(x)),
        "row_dot": lambda t, x: dc.sum_all(dc.square(dc.row_dot(x, dc.square(x)))),
        "neg_part": lambda t, x: dc.sum_all(dc.square(dc.neg_part(x))),
        "squared-leaky-relu": lambda t, x: dc.sum_all(dc.activation(SQ, x)),
        "leaky-relu": lambda t, x: dc.sum_all(dc.square(dc.activation(LEAKY, x))),
        "squared-leaky-relu'": lambda t, x: dc.sum_all(dc.mul(x, dc.activation_prime(SQ, x))),
        "leaky-relu'": lambda t, x: dc.sum_all(dc.mul(x, dc.activation_prime(LEAKY, x))),
    }
    return builders[op]


BATCH_OPS = [
    "matmul", "matmul_t", "add", "sub", "mul", "mul_row", "add_row", "mean",
    "row_dot", "neg_part", "squared-leaky-relu", "leaky-relu",
    "squared-leaky-relu'", "leaky-relu'",
]


@pytest.mark.parametrize("op", BATCH_OPS)
def test_primitive_gradients_match_finite_differences(op):
    rng = np.random.default_rng(abs(hash(op)) % 2**32)
    build = _batch_graph(op)
    for _ in range(5):
        x = rng.uniform(0.05, 2.0, size=(2, 3)) * rng.choice([-1.0, 1.0], size=(2, 3))
        g = grad_of(build, x)
        fd = finite_diff_grad(scalar_fn(build), x, 1e-6).data
        assert _rel(g, fd) < 1e-6, op


def test_matvec_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    A0, x0 = rng.standard_normal((2, 3)), rng.standard_normal(3)

    def via_A(A):
        t = Tape()
        return dc.sum_all(dc.square(dc.matvec(t.leaf(A), t.const(x0)))).value.item()

    t = Tape()
    A, x = t.leaf(A0), t.leaf(x0)
    gA, gx = backward(t, dc.sum_all(dc.square(dc.matvec(A, x))), [A, x])
    assert _rel(gA.data, finite_diff_grad(via_A, A0, 1e-6).data) < 1e-6
    fx = lambda v: float(np.sum((A0 @ v) ** 2))  # noqa: E731
    assert _rel(gx.data, finite_diff_grad(fx, x0, 1e-6).data) < 1e-6


def test_activation_prime_is_differentiable():
    # d/dx sum(sigma'(x)^2 * x) uses sigma'' inside the backward pass
    build = lambda t, x: dc.sum_all(dc.mul(dc.square(dc.activation_prime(SQ, x)), x))  # noqa: E731
    x = np.array([[1.3, -0.7, 2.1]])
    assert _rel(grad_of(build, x), finite_diff_grad(scalar_fn(build), x, 1e-6).data) < 1e-6


# -- tape --------------------------------------------------------------------


def _graph(x0):
    t = Tape()
    x = t.leaf(x0)
    W = t.leaf(np.array([[0.2, -0.3], [0.5, 0.1]]))
    u = dc.matmul_t(x, W)
    out = dc.mean(dc.mul(dc.activation(SQ, u), dc.activation_prime(SQ, u)))
    return t, out, [x, W]


def test_tape_is_topologically_ordered():
    t, _, _ = _graph(np.ones((3, 2)))
    for i, node in enumerate(t.nodes):
        assert all(j < i for j in node.inputs)


def test_tape_replay_is_bit_exact():
    t, _, _ = _graph(np.array([[0.3, -1.1], [2.0, 0.4], [-0.6, 0.7]]))
    replayed = t.replay()
    for node, value in zip(t.nodes, replayed):
        assert np.array_equal(node.value.data, value.data)


def test_replay_with_substituted_leaf_matches_fresh_build():
    x1, x2 = np.ones((2, 2)), np.array([[0.5, -2.0], [1.5, 0.25]])
    t, out, (x, _) = _graph(x1)
    replayed = t.replay({x.index: Tensor(x2)})
    _, fresh, _ = _graph(x2)
    assert np.array_equal(replayed[out.index].data, fresh.value.data)


def test_rebuild_is_deterministic():
    x0 = np.array([[0.3, -1.1], [2.0, 0.4]])
    runs = []
    for _ in range(2):
        t, out, leaves = _graph(x0)
        runs.append((out.value.data.copy(), [g.data.copy() for g in backward(t, out, leaves)]))
    assert np.array_equal(runs[0][0], runs[1][0])
    for a, b in zip(runs[0][1], runs[1][1]):
        assert np.array_equal(a, b)


def test_operands_from_other_tape_rejected():
    a, b = Tape(), Tape()
    with pytest.raises(ValueError, match="different tape"):
        dc.add(a.leaf([1.0]), b.leaf([1.0]))


def test_float32_precision_is_preserved():
    t = Tape()
    x = t.leaf(np.ones((2, 2), dtype=np.float32))
    out = dc.sum_all(dc.square(x))
    assert out.value.dtype == np.float32
    assert backward(t, out, [x])[0].dtype == np.float32
