"""Dense tensors and a tape-based reverse-mode differentiation engine.

The primitive set is deliberately small: enough to express an ICNN forward
pass *and* its analytic input gradient as ordinary graph nodes.  The
activation derivative is itself a primitive (its backward rule uses the
second derivative), so a single reverse sweep differentiates expressions
that contain input gradients.  No nested tapes are ever needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Activation",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "Var",
    "activation",
    "activation_prime",
    "add",
    "add_row",
    "apply_activation",
    "apply_activation_prime",
    "apply_activation_second",
    "backward",
    "finite_diff_grad",
    "matmul",
    "matmul_t",
    "matvec",
    "mean",
    "mul",
    "neg_part",
    "row_dot",
    "scale",
    "square",
    "sub",
    "sum_all",
]


class NonFiniteError(FloatingPointError):
    """Raised when a computation produces NaN or Inf."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


_FLOATS = (np.dtype(np.float64), np.dtype(np.float32))


class Tensor:
    """Immutable dense row-major array.

    Wraps a read-only numpy array; the shape product always equals the
    number of stored values and every value is finite.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in _FLOATS else np.float64
        arr = np.array(data, dtype=dtype, order="C")
        _check_finite(arr, "Tensor construction")
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray, where: str) -> "Tensor":
        # Fast path for op outputs: arr is freshly allocated and owned.
        _check_finite(arr, where)
        arr.setflags(write=False)
        t = cls.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, data={self.data.tolist()!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor) and self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def _not_scalar(shape):
    raise ValueError(f"tensor of shape {list(shape)} is not a scalar")


@dataclass(frozen=True)
class Activation:
    """Entry-wise activation with value, first and second derivative.

    At the kink ``t == 0`` the right branch (``t >= 0``) supplies all
    derivative values.
    """

    kind: str = "leaky-relu"
    beta: float = 0.2

    KINDS = ("squared-leaky-relu", "leaky-relu", "identity")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}; expected one of {self.KINDS}")
        if self.beta < 0:
            raise ValueError(f"activation beta must be >= 0, got {self.beta}")

    @property
    def convex(self) -> bool:
        return True

    @property
    def nondecreasing(self) -> bool:
        return self.kind in ("leaky-relu", "identity")

    def _slope(self, t: np.ndarray) -> np.ndarray:
        # arithmetic mask; much faster than np.where on mixed-sign data
        s = (t >= 0).astype(t.dtype)
        s *= 1.0 - self.beta
        s += self.beta
        return s

    def value(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return t.copy()
        h = t * self._slope(t)
        return h * h if self.kind == "squared-leaky-relu" else h

    def prime(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.ones_like(t)
        s = self._slope(t)
        if self.kind == "leaky-relu":
            return s
        return 2.0 * t * s * s

    def second(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "squared-leaky-relu":
            s = self._slope(t)
            return 2.0 * s * s
        return np.zeros_like(t)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def apply_activation(a: Activation, x) -> Tensor:
    return Tensor._wrap(a.value(_as_array(x)), f"{a.kind} value")


def apply_activation_prime(a: Activation, x) -> Tensor:
    return Tensor._wrap(a.prime(_as_array(x)), f"{a.kind} derivative")


def apply_activation_second(a: Activation, x) -> Tensor:
    return Tensor._wrap(a.second(_as_array(x)), f"{a.kind} second derivative")


# ---------------------------------------------------------------------------
# Tape


class _Node:
    __slots__ = ("op", "inputs", "fwd", "vjp", "value", "requires_grad")

    def __init__(self, op, inputs, fwd, vjp, value, requires_grad):
        self.op = op
        self.inputs = inputs
        self.fwd = fwd
        self.vjp = vjp
        self.value = value
        self.requires_grad = requires_grad


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def node(self) -> _Node:
        return self.tape.nodes[self.index]

    @property
    def value(self) -> Tensor:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.index].requires_grad

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, op={self.node.op}, shape={list(self.shape)})"


class Tape:
    """Append-only record of primitive applications.

    Nodes are stored in creation order, which is a topological order since
    an op can only consume nodes that already exist.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, requires_grad: bool = True, dtype=None) -> Var:
        if not isinstance(value, Tensor):
            value = Tensor(value, dtype=dtype)
        self.nodes.append(_Node("leaf", (), None, None, value, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def const(self, value, dtype=None) -> Var:
        return self.leaf(value, requires_grad=False, dtype=dtype)

    def _apply(self, op: str, inputs: Sequence[Var], fwd: Callable, vjp: Callable) -> Var:
        for v in inputs:
            if v.tape is not self:
                raise ValueError(f"{op}: operand belongs to a different tape")
        idx = tuple(v.index for v in inputs)
        arrays = [self.nodes[i].value.data for i in idx]
        out = Tensor._wrap(fwd(*arrays), op)
        rg = any(self.nodes[i].requires_grad for i in idx)
        self.nodes.append(_Node(op, idx, fwd, vjp, out, rg))
        return Var(self, len(self.nodes) - 1)

    def replay(self, leaves: dict[int, Tensor] | None = None) -> list[Tensor]:
        """Recompute every node from the leaves, optionally substituting some.

        Returns the list of recomputed values in node order.
        """
        leaves = leaves or {}
        values: list[Tensor] = []
        for i, node in enumerate(self.nodes):
            if node.fwd is None:
                values.append(leaves.get(i, node.value))
            else:
                arrays = [values[j].data for j in node.inputs]
                values.append(Tensor._wrap(node.fwd(*arrays), node.op))
        return values


def backward(tape: Tape, output: Var, wrt: Sequence[Var] | None = None) -> list[Tensor]:
    """Reverse sweep from a scalar output.

    Returns gradient tensors for ``wrt`` (default: every grad-requiring
    leaf, in tape order), each with its leaf's shape.
    """
    if len(tape) == 0:
        raise ValueError("backward on an empty tape")
    if output.tape is not tape:
        raise ValueError("output does not belong to this tape")
    if output.value.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {list(output.shape)}")
    if wrt is None:
        wrt = [Var(tape, i) for i, n in enumerate(tape.nodes) if n.fwd is None and n.requires_grad]

    nodes = tape.nodes
    grads: dict[int, np.ndarray] = {output.index: np.ones_like(output.value.data)}
    for i in range(output.index, -1, -1):
        g = grads.pop(i, None) if nodes[i].fwd is not None else grads.get(i)
        if g is None:
            continue
        node = nodes[i]
        if node.fwd is None:
            continue
        arrays = [nodes[j].value.data for j in node.inputs]
        needs = tuple(nodes[j].requires_grad for j in node.inputs)
        parts = node.vjp(g, needs, *arrays)
        for j, gj in zip(node.inputs, parts):
            if gj is None or not nodes[j].requires_grad:
                continue
            if j in grads:
                grads[j] = grads[j] + gj
            else:
                grads[j] = gj
    out = []
    for v in wrt:
        g = grads.get(v.index)
        if g is None:
            g = np.zeros_like(v.value.data)
        out.append(Tensor._wrap(np.array(g, dtype=v.value.dtype).reshape(v.shape), "backward"))
    return out


# ---------------------------------------------------------------------------
# Primitives


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return g.sum(axis=0).reshape(shape)


def matvec(A: Var, x: Var) -> Var:
    """``A @ x`` for a matrix and a vector."""
    if len(A.shape) != 2 or len(x.shape) != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"matvec shape mismatch: {list(A.shape)} @ {list(x.shape)}")
    return A.tape._apply(
        "matvec",
        (A, x),
        lambda a, v: a @ v,
        lambda g, nd, a, v: (np.outer(g, v) if nd[0] else None, a.T @ g if nd[1] else None),
    )


def matmul(a: Var, b: Var) -> Var:
    """Matrix product of two 2-D operands."""
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {list(a.shape)} @ {list(b.shape)}")
    return a.tape._apply(
        "matmul",
        (a, b),
        lambda x, y: x @ y,
        lambda g, nd, x, y: (g @ y.T if nd[0] else None, x.T @ g if nd[1] else None),
    )


def matmul_t(a: Var, b: Var) -> Var:
    """``a @ b.T``: applies row-stored weights ``b`` to a batch ``a``."""
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"matmul_t shape mismatch: {list(a.shape)} @ {list(b.shape)}^T")
    return a.tape._apply(
        "matmul_t",
        (a, b),
        lambda x, y: x @ y.T,
        lambda g, nd, x, y: (g @ y if nd[0] else None, g.T @ x if nd[1] else None),
    )


def _same_shape(op, a: Var, b: Var):
    if a.shape != b.shape:
        raise ValueError(f"{op} shape mismatch: {list(a.shape)} vs {list(b.shape)}")


def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return a.tape._apply("add", (a, b), lambda x, y: x + y, lambda g, nd, x, y: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return a.tape._apply("sub", (a, b), lambda x, y: x - y, lambda g, nd, x, y: (g, -g))


def mul(a: Var, b: Var) -> Var:
    """Elementwise product; ``b`` may also be a single row broadcast over ``a``."""
    if a.shape != b.shape and not (len(a.shape) == 2 and b.shape in ((a.shape[1],), (1, a.shape[1]))):
        raise ValueError(f"mul shape mismatch: {list(a.shape)} vs {list(b.shape)}")
    bshape = b.shape
    return a.tape._apply(
        "mul",
        (a, b),
        lambda x, y: x * y,
        lambda g, nd, x, y: (g * y if nd[0] else None, _sum_to(g * x, bshape) if nd[1] else None),
    )


def add_row(x: Var, b: Var) -> Var:
    """Add a bias vector to every row of a batch."""
    if len(x.shape) != 2 or b.shape != (x.shape[1],):
        raise ValueError(f"add_row shape mismatch: {list(x.shape)} + {list(b.shape)}")
    return x.tape._apply("add_row", (x, b), lambda u, v: u + v, lambda g, nd, u, v: (g, g.sum(axis=0) if nd[1] else None))


def scale(x: Var, c: float) -> Var:
    c = float(c)
    return x.tape._apply("scale", (x,), lambda u: u * c, lambda g, nd, u: (g * c,))


def square(x: Var) -> Var:
    return x.tape._apply("square", (x,), lambda u: u * u, lambda g, nd, u: (2.0 * g * u,))


def neg_part(x: Var) -> Var:
    """Entrywise ``max(-x, 0)``; derivative 0 at the kink."""
    return x.tape._apply(
        "neg_part",
        (x,),
        lambda u: np.maximum(-u, 0.0),
        lambda g, nd, u: (np.where(u < 0, -g, 0.0),),
    )


def sum_all(x: Var) -> Var:
    return x.tape._apply(
        "sum",
        (x,),
        lambda u: np.asarray(u.sum(), dtype=u.dtype).reshape(()),
        lambda g, nd, u: (np.broadcast_to(g, u.shape).copy(),),
    )


def mean(x: Var) -> Var:
    n = x.value.data.size
    return x.tape._apply(
        "mean",
        (x,),
        lambda u: np.asarray(u.sum() / n, dtype=u.dtype).reshape(()),
        lambda g, nd, u: (np.full(u.shape, g / n, dtype=u.dtype),),
    )


def row_dot(a: Var, b: Var) -> Var:
    """Per-row inner products of two batches: shape ``[M]``."""
    _same_shape("row_dot", a, b)
    return a.tape._apply(
        "row_dot",
        (a, b),
        lambda x, y: np.einsum("ij,ij->i", x, y),
        lambda g, nd, x, y: (g[:, None] * y if nd[0] else None, g[:, None] * x if nd[1] else None),
    )


def activation(a: Activation, x: Var) -> Var:
    """Entrywise activation value."""
    if a.kind == "identity":
        return x
    return x.tape._apply(
        f"{a.kind}",
        (x,),
        a.value,
        lambda g, nd, u: (g * a.prime(u),),
    )


def activation_prime(a: Activation, x: Var) -> Var:
    """Entrywise activation derivative, differentiable through the second derivative."""
    if a.kind == "identity":
        return x.tape.const(np.ones(x.shape, dtype=x.value.dtype))
    if a.kind == "leaky-relu":
        # piecewise constant: zero backward contribution
        return x.tape._apply(f"{a.kind}'", (x,), a.prime, lambda g, nd, u: (None,))
    return x.tape._apply(
        f"{a.kind}'",
        (x,),
        a.prime,
        lambda g, nd, u: (g * a.second(u),),
    )


# ---------------------------------------------------------------------------
# Finite differences


def finite_diff_grad(fn: Callable[[np.ndarray], float], x, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function of an array."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x0 = np.array(_as_array(x), dtype=np.float64)
    flat = x0.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn(x0))
        flat[i] = old - h
        fm = float(fn(x0))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad.reshape(x0.shape))
