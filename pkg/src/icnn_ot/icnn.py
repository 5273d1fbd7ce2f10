"""Input convex neural networks.

Layer recursion for ``l = 0..L-1`` (with ``W_0 = 0``)::

    u_l     = W_l z_l + A_l x + b_l
    z_{l+1} = sigma_l(u_l)

sigma_0 is the squared leaky ReLU, hidden layers use the leaky ReLU and the
last layer is affine with a single output unit.  The input gradient is built
as an explicit graph on the same tape so it can be differentiated with
respect to the parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Activation, Tape, Tensor, Var

__all__ = [
    "IcnnConfig",
    "IcnnParams",
    "IcnnVars",
    "bind",
    "forward_graph",
    "icnn_forward",
    "icnn_input_grad",
    "init_params",
    "input_grad_graph",
    "load_checkpoint",
    "nonneg_regularizer",
    "params_from_doc",
    "params_to_doc",
    "project_nonneg",
    "quadratic_params",
    "regularizer_graph",
    "save_checkpoint",
]


@dataclass(frozen=True)
class IcnnConfig:
    input_dim: int
    hidden_width: int = 64
    num_layers: int = 4
    hidden_activation: Activation = field(default_factory=lambda: Activation("leaky-relu", 0.2))
    first_activation: Activation = field(default_factory=lambda: Activation("squared-leaky-relu", 0.2))

    def __post_init__(self):
        for name in ("input_dim", "hidden_width", "num_layers"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"IcnnConfig.{name} must be a positive integer, got {v!r}")
        if not self.first_activation.convex:
            raise ValueError("first activation must be convex")
        if not (self.hidden_activation.convex and self.hidden_activation.nondecreasing):
            raise ValueError(
                f"hidden activation {self.hidden_activation.kind!r} must be convex and nondecreasing"
            )

    def widths(self) -> list[int]:
        """Output width of each layer."""
        return [self.hidden_width] * (self.num_layers - 1) + [1]

    def activations(self) -> list[Activation]:
        L = self.num_layers
        acts = []
        for l in range(L):
            if l == L - 1:
                acts.append(Activation("identity", 0.0))
            elif l == 0:
                acts.append(self.first_activation)
            else:
                acts.append(self.hidden_activation)
        return acts

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IcnnConfig":
        d = dict(d)
        for key in ("hidden_activation", "first_activation"):
            if key in d and isinstance(d[key], dict):
                d[key] = Activation(**d[key])
        return cls(**d)


@dataclass
class IcnnParams:
    """Weights of one network.

    ``W[l-1]`` holds layer ``l``'s hidden-to-hidden weights (layer 0 has none),
    ``A[l]`` has shape ``[width_l, d]`` and ``b[l]`` shape ``[width_l]``.
    """

    W: list[np.ndarray]
    A: list[np.ndarray]
    b: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list in a fixed order (W..., A..., b...)."""
        return [*self.W, *self.A, *self.b]

    @classmethod
    def from_arrays(cls, arrays, num_layers: int) -> "IcnnParams":
        arrays = list(arrays)
        nW = num_layers - 1
        return cls(arrays[:nW], arrays[nW : nW + num_layers], arrays[nW + num_layers :])

    def copy(self) -> "IcnnParams":
        return IcnnParams([w.copy() for w in self.W], [a.copy() for a in self.A], [b.copy() for b in self.b])

    def astype(self, dtype) -> "IcnnParams":
        return IcnnParams(
            [w.astype(dtype) for w in self.W], [a.astype(dtype) for a in self.A], [b.astype(dtype) for b in self.b]
        )

    def check(self, cfg: IcnnConfig) -> None:
        widths = cfg.widths()
        if len(self.A) != cfg.num_layers or len(self.b) != cfg.num_layers or len(self.W) != cfg.num_layers - 1:
            raise ValueError("parameter list lengths do not match the number of layers")
        for l, w in enumerate(widths):
            if self.A[l].shape != (w, cfg.input_dim):
                raise ValueError(f"A[{l}] has shape {self.A[l].shape}, expected {(w, cfg.input_dim)}")
            if self.b[l].shape != (w,):
                raise ValueError(f"b[{l}] has shape {self.b[l].shape}, expected {(w,)}")
            if l > 0 and self.W[l - 1].shape != (w, widths[l - 1]):
                raise ValueError(f"W[{l}] has shape {self.W[l - 1].shape}, expected {(w, widths[l - 1])}")

    def min_weight(self) -> float:
        return min((float(w.min()) for w in self.W), default=0.0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IcnnParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class IcnnVars:
    """Parameters bound as leaves of one tape."""

    W: list[Var]
    A: list[Var]
    b: list[Var]

    def leaves(self) -> list[Var]:
        return [*self.W, *self.A, *self.b]


def bind(tape: Tape, p: IcnnParams, requires_grad: bool = True) -> IcnnVars:
    mk = tape.leaf if requires_grad else tape.const
    return IcnnVars([mk(w) for w in p.W], [mk(a) for a in p.A], [mk(b) for b in p.b])


def _preactivations(v: IcnnVars, cfg: IcnnConfig, x: Var) -> tuple[list[Var], Var]:
    acts = cfg.activations()
    us = []
    z = None
    for l in range(cfg.num_layers):
        u = dc.matmul_t(x, v.A[l])
        if l > 0:
            u = dc.add(u, dc.matmul_t(z, v.W[l - 1]))
        u = dc.add_row(u, v.b[l])
        us.append(u)
        z = dc.activation(acts[l], u)
    return us, z


def forward_graph(v: IcnnVars, cfg: IcnnConfig, x: Var) -> Var:
    """Network values for a batch ``x`` of shape ``[M, d]``; result has shape ``[M, 1]``."""
    if len(x.shape) != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"input batch shape {list(x.shape)} does not match input_dim={cfg.input_dim}")
    return _preactivations(v, cfg, x)[1]


def input_grad_graph(v: IcnnVars, cfg: IcnnConfig, x: Var, with_value: bool = False):
    """Gradient of the network w.r.t. its input, one row per sample.

    Backward recursion over layers with ``delta_{L-1} = sigma'_{L-1}(u_{L-1})``::

        grad += delta_l A_l
        delta_{l-1} = (delta_l W_l) * sigma'_{l-1}(u_{l-1})
    """
    if len(x.shape) != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"input batch shape {list(x.shape)} does not match input_dim={cfg.input_dim}")
    acts = cfg.activations()
    us, out = _preactivations(v, cfg, x)
    L = cfg.num_layers
    delta = dc.activation_prime(acts[L - 1], us[L - 1])
    grad = None
    for l in range(L - 1, -1, -1):
        term = dc.matmul(delta, v.A[l])
        grad = term if grad is None else dc.add(grad, term)
        if l > 0:
            back = dc.matmul(delta, v.W[l - 1])
            delta = dc.mul(back, dc.activation_prime(acts[l - 1], us[l - 1]))
    return (grad, out) if with_value else grad


def regularizer_graph(v: IcnnVars, lam: float, tape: Tape) -> Var:
    """``lam * sum_l ||max(-W_l, 0)||_F^2`` on the tape."""
    total = None
    for w in v.W:
        term = dc.sum_all(dc.square(dc.neg_part(w)))
        total = term if total is None else dc.add(total, term)
    if total is None:
        return tape.const(np.zeros(()))
    return dc.scale(total, lam)


# ---------------------------------------------------------------------------
# Tape-free conveniences


def _as_batch(x, d: int) -> tuple[np.ndarray, bool]:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape[0] != d:
            raise ValueError(f"input of length {arr.shape[0]} does not match input_dim={d}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError(f"input of shape {list(arr.shape)} does not match input_dim={d}")
    return arr, False


def icnn_forward(p: IcnnParams, cfg: IcnnConfig, x):
    """Network value for a single input (float) or a batch (array of shape ``[M]``)."""
    p.check(cfg)
    batch, single = _as_batch(x, cfg.input_dim)
    tape = Tape()
    out = forward_graph(bind(tape, p, requires_grad=False), cfg, tape.const(batch, dtype=batch.dtype))
    vals = out.value.data[:, 0]
    return float(vals[0]) if single else vals.copy()


def icnn_input_grad(p: IcnnParams, cfg: IcnnConfig, x) -> np.ndarray:
    """Input gradient for a single input (shape ``[d]``) or a batch (``[M, d]``)."""
    p.check(cfg)
    batch, single = _as_batch(x, cfg.input_dim)
    tape = Tape()
    g = input_grad_graph(bind(tape, p, requires_grad=False), cfg, tape.const(batch, dtype=batch.dtype))
    vals = g.value.numpy()
    return vals[0] if single else vals


def icnn_value_and_grad(p: IcnnParams, cfg: IcnnConfig, x) -> tuple[np.ndarray, np.ndarray]:
    batch, _ = _as_batch(x, cfg.input_dim)
    tape = Tape()
    g, out = input_grad_graph(
        bind(tape, p, requires_grad=False), cfg, tape.const(batch, dtype=batch.dtype), with_value=True
    )
    return out.value.data[:, 0].copy(), g.value.numpy()


def project_nonneg(p: IcnnParams) -> IcnnParams:
    """Clamp every hidden-to-hidden weight at zero; ``A`` and ``b`` are shared, not copied."""
    return IcnnParams([np.maximum(w, 0.0) for w in p.W], list(p.A), list(p.b))


def nonneg_regularizer(p: IcnnParams, lam: float) -> float:
    if lam < 0:
        raise ValueError("regularization constant must be nonnegative")
    return float(lam * sum(float(np.sum(np.maximum(-w, 0.0) ** 2)) for w in p.W))


def init_params(cfg: IcnnConfig, seed=0, scale: float = 1.0, dtype=np.float64) -> IcnnParams:
    """Fan-in scaled Gaussian initialization; ``W`` entries are made nonnegative.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    widths = cfg.widths()
    d = cfg.input_dim
    W, A, b = [], [], []
    for l, w in enumerate(widths):
        fan_in = d + (widths[l - 1] if l > 0 else 0)
        std = scale / np.sqrt(fan_in)
        A.append((rng.standard_normal((w, d)) * std).astype(dtype))
        if l > 0:
            W.append(np.abs(rng.standard_normal((w, widths[l - 1])) * std).astype(dtype))
        b.append((rng.standard_normal(w) * std).astype(dtype))
    return IcnnParams(W, A, b)


def quadratic_params(d: int, curvature: float = 1.0, beta: float = 0.2) -> tuple[IcnnParams, IcnnConfig]:
    """Exact two-layer ICNN for ``curvature/2 * ||x||^2``.

    Uses ``h(t)^2 + h(-t)^2 = (1 + beta^2) t^2`` for the squared leaky ReLU.
    """
    cfg = IcnnConfig(
        input_dim=d,
        hidden_width=2 * d,
        num_layers=2,
        hidden_activation=Activation("leaky-relu", beta),
        first_activation=Activation("squared-leaky-relu", beta),
    )
    eye = np.eye(d)
    A0 = np.vstack([eye, -eye])
    W1 = np.full((1, 2 * d), curvature / (2.0 * (1.0 + beta * beta)))
    p = IcnnParams([W1], [A0, np.zeros((1, d))], [np.zeros(2 * d), np.zeros(1)])
    return p, cfg


# ---------------------------------------------------------------------------
# Checkpoints


def params_to_doc(p: IcnnParams, cfg: IcnnConfig) -> dict:
    def enc(a: np.ndarray) -> dict:
        return {"shape": list(a.shape), "values": [float(v) for v in a.reshape(-1)]}

    return {
        "config": cfg.to_dict(),
        "W": [enc(w) for w in p.W],
        "A": [enc(a) for a in p.A],
        "b": [enc(b) for b in p.b],
    }


def params_from_doc(doc: dict) -> tuple[IcnnParams, IcnnConfig]:
    cfg = IcnnConfig.from_dict(doc["config"])

    def dec(t: dict) -> np.ndarray:
        return np.array(t["values"], dtype=np.float64).reshape(t["shape"])

    p = IcnnParams([dec(t) for t in doc["W"]], [dec(t) for t in doc["A"]], [dec(t) for t in doc["b"]])
    p.check(cfg)
    return p, cfg


def save_checkpoint(path, players: dict[str, tuple[IcnnParams, IcnnConfig]], **meta) -> None:
    """Write networks (e.g. ``{"f": ..., "g": ...}``) as one JSON document.

    Floats are written with Python's shortest round-trip repr, so reading and
    re-writing reproduces every value exactly.
    """
    doc = {"format": "icnn-ot-checkpoint/1", **meta}
    doc["networks"] = {name: params_to_doc(p, c) for name, (p, c) in players.items()}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[dict[str, tuple[IcnnParams, IcnnConfig]], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "icnn-ot-checkpoint/1":
        raise ValueError(f"{path}: not an icnn-ot checkpoint")
    nets = {name: params_from_doc(d) for name, d in doc.pop("networks").items()}
    doc.pop("format")
    return nets, doc
