"""Minimax training of two ICNNs for the squared-Euclidean transport problem.

The empirical objective on batches ``X ~ P`` (target) and ``Y ~ Q`` (source)::

    J = mean_i [ f(grad g(Y_i)) - <Y_i, grad g(Y_i)> - f(X_i) ]

``g`` minimizes ``J + R(g)``, ``f`` maximizes ``J`` subject to nonnegative
hidden weights, and ``J + C_PQ`` estimates the squared W2 distance (cost
``|x - y|^2 / 2``).  The transport map is ``grad g``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import diffcore as dc
from .data import DistributionSpec, RngStream, sample
from .diffcore import NonFiniteError, Tape
from .icnn import (
    IcnnConfig,
    IcnnParams,
    bind,
    forward_graph,
    icnn_forward,
    icnn_value_and_grad,
    init_params,
    input_grad_graph,
    nonneg_regularizer,
    regularizer_graph,
)
from .optim import AdamConfig, AdamState, adam_step, current_lr

__all__ = [
    "DIVERGENCE_LIMIT",
    "MetricsRecord",
    "TrainConfig",
    "TrainState",
    "TrainingDiverged",
    "c_pq_estimate",
    "evaluate_w2",
    "init_state",
    "objective_J",
    "objective_grads",
    "objective_graph",
    "train",
    "transport",
]

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8
PRECISIONS = {"float64": np.float64, "float32": np.float32}


class TrainingDiverged(RuntimeError):
    """Objective blew up or went non-finite; carries where it happened."""

    def __init__(self, message: str, iteration: int, inner: int | None, seed: int):
        where = f"iteration {iteration}" + (f", inner step {inner}" if inner is not None else "")
        super().__init__(f"{message} at {where} (seed {seed})")
        self.iteration = iteration
        self.inner = inner
        self.seed = seed


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    inner_iters: int = 10
    total_iters: int = 20000
    reg: float = 1.0
    f_optim: AdamConfig = field(default_factory=AdamConfig)
    g_optim: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    # None: derive network initialization from ``seed`` as well
    init_seed: int | None = None
    init_scale: float = 1.0
    precision: str = "float64"
    eval_every: int = 1000
    eval_batch: int = 8192

    def __post_init__(self):
        for name in ("batch_size", "inner_iters", "eval_every", "eval_batch"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"TrainConfig.{name} must be a positive integer, got {v!r}")
        if not isinstance(self.total_iters, (int, np.integer)) or self.total_iters < 0:
            raise ValueError(f"TrainConfig.total_iters must be a nonnegative integer, got {self.total_iters!r}")
        if self.reg < 0:
            raise ValueError(f"TrainConfig.reg must be >= 0, got {self.reg}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"TrainConfig.precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class TrainState:
    f: IcnnParams
    g: IcnnParams
    f_cfg: IcnnConfig
    g_cfg: IcnnConfig
    f_opt: AdamState
    g_opt: AdamState
    streams: dict[str, RngStream]
    t: int = 0


@dataclass(frozen=True)
class MetricsRecord:
    iter: int
    J: float
    reg: float
    w2_estimate: float
    c_pq: float
    lr_f: float
    lr_g: float
    wall_clock: float = 0.0

    def to_json(self, with_wall_clock: bool = False) -> str:
        d = asdict(self)
        if not with_wall_clock:
            d.pop("wall_clock")
        return json.dumps(d)


# ---------------------------------------------------------------------------
# Objective


def objective_graph(tape: Tape, vf, vg, f_cfg: IcnnConfig, g_cfg: IcnnConfig, x, y, include_fx: bool = True):
    """``J`` on the tape; ``x``/``y`` are batch Vars. ``include_fx=False`` drops the ``f(X)`` term."""
    grad_g = input_grad_graph(vg, g_cfg, y)
    term = dc.sub(dc.mean(forward_graph(vf, f_cfg, grad_g)), dc.mean(dc.row_dot(y, grad_g)))
    if include_fx:
        term = dc.sub(term, dc.mean(forward_graph(vf, f_cfg, x)))
    return term


def _check_batches(X: np.ndarray, Y: np.ndarray, f_cfg: IcnnConfig, g_cfg: IcnnConfig):
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"batches must both be [M, d] with equal M, got {X.shape} and {Y.shape}")
    if X.shape[1] != f_cfg.input_dim or Y.shape[1] != g_cfg.input_dim:
        raise ValueError("batch dimension does not match the networks' input_dim")


def objective_J(pf: IcnnParams, pg: IcnnParams, f_cfg: IcnnConfig, g_cfg: IcnnConfig, X, Y) -> float:
    X, Y = np.asarray(X), np.asarray(Y)
    _check_batches(X, Y, f_cfg, g_cfg)
    tape = Tape()
    J = objective_graph(tape, bind(tape, pf, False), bind(tape, pg, False), f_cfg, g_cfg, tape.const(X), tape.const(Y))
    return J.value.item()


def objective_grads(pf, pg, f_cfg, g_cfg, X, Y, lam: float = 0.0, wrt: str = "both"):
    """Value and parameter gradients of ``J`` (plus ``R(g)`` when ``lam > 0``).

    ``wrt`` is ``"f"``, ``"g"`` or ``"both"``; returns ``(value, grads_f, grads_g)``
    with ``None`` for the player not requested.  Gradients follow the
    ``IcnnParams.arrays()`` order.
    """
    X, Y = np.asarray(X), np.asarray(Y)
    _check_batches(X, Y, f_cfg, g_cfg)
    tape = Tape()
    vf = bind(tape, pf, wrt in ("f", "both"))
    vg = bind(tape, pg, wrt in ("g", "both"))
    J = objective_graph(tape, vf, vg, f_cfg, g_cfg, tape.const(X), tape.const(Y))
    if lam > 0:
        J = dc.add(J, regularizer_graph(vg, lam, tape))
    leaves = []
    if wrt in ("f", "both"):
        leaves += vf.leaves()
    if wrt in ("g", "both"):
        leaves += vg.leaves()
    grads = [t.data for t in dc.backward(tape, J, leaves)]
    nf = len(vf.leaves()) if wrt in ("f", "both") else 0
    gf = grads[:nf] if wrt in ("f", "both") else None
    gg = grads[nf:] if wrt in ("g", "both") else None
    return J.value.item(), gf, gg


def c_pq_estimate(X, Y) -> float:
    """``(mean |X|^2 + mean |Y|^2) / 2``."""
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    if X.size == 0 or Y.size == 0:
        raise ValueError("c_pq_estimate needs nonempty batches")
    return 0.5 * (float(np.mean(np.sum(X * X, axis=1))) + float(np.mean(np.sum(Y * Y, axis=1))))


def transport(pg: IcnnParams, g_cfg: IcnnConfig, Y) -> np.ndarray:
    """Row-wise ``grad g``: the generated samples ``T(Y)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape[1] != g_cfg.input_dim:
        raise ValueError(f"batch dimension {Y.shape[1]} does not match input_dim={g_cfg.input_dim}")
    return icnn_value_and_grad(pg.astype(np.float64), g_cfg, Y)[1]


def evaluate_w2(pf, f_cfg, pg, g_cfg, X, Y) -> tuple[float, float, float]:
    """``(J, C_PQ, J + C_PQ)`` on one evaluation batch pair, in 64-bit."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_batches(X, Y, f_cfg, g_cfg)
    pf, pg = pf.astype(np.float64), pg.astype(np.float64)
    T = icnn_value_and_grad(pg, g_cfg, Y)[1]
    J = float(np.mean(icnn_forward(pf, f_cfg, T)) - np.mean(np.sum(Y * T, axis=1)) - np.mean(icnn_forward(pf, f_cfg, X)))
    c = c_pq_estimate(X, Y)
    return J, c, J + c


# ---------------------------------------------------------------------------
# Algorithm


def init_state(cfg: TrainConfig, f_cfg: IcnnConfig, g_cfg: IcnnConfig) -> TrainState:
    seed = cfg.seed
    init_seed = cfg.seed if cfg.init_seed is None else cfg.init_seed
    streams = {
        "init-f": RngStream(init_seed, "init-f"),
        "init-g": RngStream(init_seed, "init-g"),
        "P": RngStream(seed, "P"),
        "Q": RngStream(seed, "Q"),
        "eval": RngStream(seed, "eval"),
    }
    f = init_params(f_cfg, streams["init-f"].generator(), cfg.init_scale, dtype=cfg.dtype)
    g = init_params(g_cfg, streams["init-g"].generator(), cfg.init_scale, dtype=cfg.dtype)
    return TrainState(
        f=f,
        g=g,
        f_cfg=f_cfg,
        g_cfg=g_cfg,
        f_opt=AdamState.zeros_like(cfg.f_optim, f.arrays()),
        g_opt=AdamState.zeros_like(cfg.g_optim, g.arrays()),
        streams=streams,
    )


def _g_grads(state: TrainState, lam: float, Y: np.ndarray):
    tape = Tape()
    vf = bind(tape, state.f, False)
    vg = bind(tape, state.g, True)
    obj = objective_graph(tape, vf, vg, state.f_cfg, state.g_cfg, None, tape.const(Y), include_fx=False)
    if lam > 0:
        obj = dc.add(obj, regularizer_graph(vg, lam, tape))
    grads = dc.backward(tape, obj, vg.leaves())
    return obj.value.item(), [g.data for g in grads]


def _f_grads(state: TrainState, X: np.ndarray, Y: np.ndarray):
    tape = Tape()
    vf = bind(tape, state.f, True)
    vg = bind(tape, state.g, False)
    J = objective_graph(tape, vf, vg, state.f_cfg, state.g_cfg, tape.const(X), tape.const(Y))
    grads = dc.backward(tape, J, vf.leaves())
    return J.value.item(), [g.data for g in grads]


def _diverged(value: float) -> bool:
    return not np.isfinite(value) or abs(value) > DIVERGENCE_LIMIT


def _metrics(cfg: TrainConfig, state: TrainState, source, target, started: float) -> MetricsRecord:
    X = sample(target, cfg.eval_batch, state.streams["eval"])
    Y = sample(source, cfg.eval_batch, state.streams["eval"])
    J, c, w2 = evaluate_w2(state.f, state.f_cfg, state.g, state.g_cfg, X, Y)
    i = state.t - 1
    return MetricsRecord(
        iter=state.t,
        J=J,
        reg=nonneg_regularizer(state.g, cfg.reg),
        w2_estimate=w2,
        c_pq=c,
        lr_f=current_lr(cfg.f_optim.schedule, cfg.f_optim.lr, i),
        lr_g=current_lr(cfg.g_optim.schedule, cfg.g_optim.lr, i),
        wall_clock=time.perf_counter() - started,
    )


Sink = Callable[[MetricsRecord, TrainState], None]


def train(
    cfg: TrainConfig,
    f_cfg: IcnnConfig,
    g_cfg: IcnnConfig,
    source: DistributionSpec,
    target: DistributionSpec,
    sinks: Iterable[Sink] = (),
    state: TrainState | None = None,
) -> tuple[TrainState, list[MetricsRecord]]:
    """Run the alternating scheme for ``cfg.total_iters`` outer iterations.

    Each outer iteration draws one target batch, takes ``inner_iters``
    minimization steps for ``g`` (fresh source batch each), one maximization
    step for ``f`` on the last source batch, then clamps ``f``'s hidden
    weights at zero.  Evaluation records go to every sink.
    """
    if source.dim != g_cfg.input_dim or target.dim != f_cfg.input_dim or f_cfg.input_dim != g_cfg.input_dim:
        raise ValueError(
            f"dimension mismatch: source dim {source.dim}, target dim {target.dim}, "
            f"f input_dim {f_cfg.input_dim}, g input_dim {g_cfg.input_dim}"
        )
    if state is None:
        state = init_state(cfg, f_cfg, g_cfg)
    sinks = list(sinks)
    records: list[MetricsRecord] = []
    dtype = cfg.dtype
    M, K = cfg.batch_size, cfg.inner_iters
    f_arrays, g_arrays = state.f.arrays(), state.g.arrays()
    started = time.perf_counter()

    while state.t < cfg.total_iters:
        t = state.t
        lr_f = current_lr(cfg.f_optim.schedule, cfg.f_optim.lr, t)
        lr_g = current_lr(cfg.g_optim.schedule, cfg.g_optim.lr, t)
        X = sample(target, M, state.streams["P"], dtype)
        for k in range(K):
            Y = sample(source, M, state.streams["Q"], dtype)
            try:
                val, gg = _g_grads(state, cfg.reg, Y)
                if _diverged(val):
                    raise NonFiniteError(f"objective magnitude {val:.3g}")
                adam_step(state.g_opt, g_arrays, gg, "minimize", lr=lr_g)
            except NonFiniteError as exc:
                raise TrainingDiverged(str(exc), t + 1, k + 1, cfg.seed) from exc
        try:
            J, gf = _f_grads(state, X, Y)
            if _diverged(J):
                raise NonFiniteError(f"objective magnitude {J:.3g}")
            adam_step(state.f_opt, f_arrays, gf, "maximize", lr=lr_f)
        except NonFiniteError as exc:
            raise TrainingDiverged(str(exc), t + 1, None, cfg.seed) from exc
        for w in state.f.W:
            np.maximum(w, 0.0, out=w)
        state.t = t + 1

        if state.t % cfg.eval_every == 0:
            rec = _metrics(cfg, state, source, target, started)
            if _diverged(rec.J):
                raise TrainingDiverged(f"evaluation objective {rec.J:.3g}", state.t, None, cfg.seed)
            records.append(rec)
            log.info(
                "iter %d  J=%.5f  W2^2~%.5f  R=%.3g  (%.1fs)", rec.iter, rec.J, rec.w2_estimate, rec.reg, rec.wall_clock
            )
            for sink in sinks:
                sink(rec, state)
    return state, records
