"""Oracles and metrics for learned transport maps.

Independent checks that do not go through the training code path: exact
1-D matching, Gaussian closed forms, transported-mean error, support
coverage for the 2-D datasets, the minimization gap and the stability
bound relating it to the map error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .data import (
    CHECKER_SOURCE_CENTERS,
    CHECKER_TARGET_CENTERS,
    EIGHT_GAUSSIAN_CENTERS,
    EIGHT_GAUSSIAN_VAR,
    LOWRANK_MEANS_2D,
    LOWRANK_VAR,
    DistributionSpec,
    RngStream,
    sample,
)
from .diffcore import Tape
from .icnn import IcnnConfig, IcnnParams, bind, forward_graph, icnn_value_and_grad, init_params, input_grad_graph
from .optim import AdamConfig, AdamState, adam_step

__all__ = [
    "GridExport",
    "IcnnPotential",
    "Quadratic",
    "StabilityReport",
    "cell_masses",
    "eps1_closed_form",
    "eps1_estimate",
    "export_grid",
    "mean_transport_error",
    "sorted_matching_w2",
    "stability_check",
    "support_coverage",
    "support_distance",
]


# ---------------------------------------------------------------------------
# Potentials


@dataclass(frozen=True)
class Quadratic:
    """``f(x) = curvature/2 * |x|^2``; ``curvature``-strongly convex, with known conjugate."""

    curvature: float = 1.0

    def value(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * self.curvature * np.sum(x * x, axis=1)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.curvature * x

    def conjugate(self, y: np.ndarray) -> np.ndarray:
        return 0.5 * np.sum(y * y, axis=1) / self.curvature

    def conjugate_grad(self, y: np.ndarray) -> np.ndarray:
        return y / self.curvature

    def graph(self, tape: Tape, x: dc.Var) -> dc.Var:
        """Per-row values as an ``[M]`` node."""
        return dc.scale(dc.row_dot(x, x), 0.5 * self.curvature)


class IcnnPotential:
    """Adapter giving an ICNN the same interface as the analytic potentials."""

    def __init__(self, params: IcnnParams, cfg: IcnnConfig):
        self.params = params.astype(np.float64)
        self.cfg = cfg

    def value(self, x: np.ndarray) -> np.ndarray:
        return icnn_value_and_grad(self.params, self.cfg, x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        return icnn_value_and_grad(self.params, self.cfg, x)[1]

    def graph(self, tape: Tape, x: dc.Var) -> dc.Var:
        return forward_graph(bind(tape, self.params, False), self.cfg, x)


def _as_potential(p):
    if isinstance(p, tuple) and len(p) == 2 and isinstance(p[0], IcnnParams):
        return IcnnPotential(*p)
    return p


# ---------------------------------------------------------------------------
# 1-D and Gaussian oracles


def sorted_matching_w2(a, b) -> float:
    """Exact empirical squared W2 in 1-D under cost ``|x - y|^2 / 2``."""
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.size != b.size:
        raise ValueError(f"sample sizes differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("need at least one sample")
    return 0.5 * float(np.mean((a - b) ** 2))


def mean_transport_error(transported, mu) -> tuple[float, float | None]:
    """``|mean(T) - mu|^2`` and ``100 * |mean(T) - mu|^2 / |mu|^2`` (``None`` if ``mu = 0``)."""
    transported = np.atleast_2d(np.asarray(transported, dtype=np.float64))
    if transported.shape[0] == 0:
        raise ValueError("empty batch")
    mu = np.asarray(mu, dtype=np.float64)
    diff = transported.mean(axis=0) - mu
    absolute = float(diff @ diff)
    denom = float(mu @ mu)
    return absolute, (100.0 * absolute / denom if denom > 0 else None)


# ---------------------------------------------------------------------------
# Support membership


def _dist_to_squares(p: np.ndarray, centers: np.ndarray, half: float = 0.5) -> np.ndarray:
    # [n, k] Euclidean distances from points to axis-aligned squares
    gap = np.maximum(np.abs(p[:, None, :] - centers[None, :, :]) - half, 0.0)
    return np.sqrt(np.sum(gap * gap, axis=2))


def _dist_to_balls(p: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    d = np.sqrt(np.sum((p[:, None, :] - centers[None, :, :]) ** 2, axis=2))
    return np.maximum(d - radius, 0.0)


def _component_distances(points: np.ndarray, spec: DistributionSpec) -> np.ndarray:
    if spec.kind == "checkerboard-target":
        return _dist_to_squares(points, CHECKER_TARGET_CENTERS)
    if spec.kind == "checkerboard-source":
        return _dist_to_squares(points, CHECKER_SOURCE_CENTERS)
    if spec.kind == "eight-gaussian-target":
        return _dist_to_balls(points, EIGHT_GAUSSIAN_CENTERS, 3.0 * np.sqrt(EIGHT_GAUSSIAN_VAR))
    if spec.kind == "highdim-lowrank-mixture":
        core = _dist_to_balls(points[:, :2], LOWRANK_MEANS_2D, 3.0 * np.sqrt(LOWRANK_VAR))
        rest = np.sum(points[:, 2:] ** 2, axis=1)
        return np.sqrt(core**2 + rest[:, None])
    raise ValueError(f"no support membership test for {spec.kind!r}")


def support_distance(points, spec: DistributionSpec) -> np.ndarray:
    """Distance of each point to the support (mixture cores: within 3 sigma)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != spec.dim:
        raise ValueError(f"points have dim {points.shape[1]}, spec has dim {spec.dim}")
    return _component_distances(points, spec).min(axis=1)


def support_coverage(points, spec: DistributionSpec, tau: float = 0.1) -> float:
    """Fraction of points within ``tau`` of the support of ``spec``."""
    return float(np.mean(support_distance(points, spec) <= tau))


def cell_masses(points, spec: DistributionSpec) -> np.ndarray:
    """Fraction of points whose nearest support component is each component."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = _component_distances(points, spec)
    idx = np.argmin(d, axis=1)
    return np.bincount(idx, minlength=d.shape[1]) / len(points)


# ---------------------------------------------------------------------------
# Minimization gap and stability bound


def _tail_values(f, g, Y: np.ndarray) -> np.ndarray:
    # per-sample f(grad g(y)) - <y, grad g(y)>
    T = g.grad(Y)
    return f.value(T) - np.sum(Y * T, axis=1)


def eps1_closed_form(f, g, Y) -> tuple[float, float]:
    """Minimization gap using a known conjugate ``f*``: mean and standard error.

    Per sample: ``f*(y) - <y, grad g(y)> + f(grad g(y))``, which is
    nonnegative whenever ``f`` is convex.
    """
    f, g = _as_potential(f), _as_potential(g)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    vals = f.conjugate(Y) + _tail_values(f, g, Y)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0


def eps1_estimate(
    f,
    g,
    q_spec: DistributionSpec,
    inner_budget: int,
    restarts: int = 1,
    stream: RngStream | None = None,
    net: IcnnConfig | None = None,
    lr: float = 1e-2,
    batch_size: int = 256,
    n_eval: int = 20000,
) -> float:
    """Gap between ``V(f, g)`` and the best ``V(f, g~)`` found by re-training ``g~``.

    ``g~`` is an ICNN (``net``) trained from ``restarts`` fresh initializations
    for ``inner_budget`` Adam steps each.  All candidates, ``g`` included, are
    compared on one shared evaluation batch, so the result is never negative.
    An inexact inner search can only find a larger ``V(f, g~)``, i.e. it
    shrinks the estimate.
    """
    if inner_budget < 1 or restarts < 1:
        raise ValueError("inner_budget and restarts must be >= 1")
    f, g = _as_potential(f), _as_potential(g)
    stream = stream or RngStream(0, "eps1")
    d = q_spec.dim
    net = net or IcnnConfig(d, hidden_width=max(8, 4 * d), num_layers=2)
    Y_eval = sample(q_spec, n_eval, stream)
    base = float(_tail_values(f, g, Y_eval).mean())
    best = base
    for r in range(restarts):
        p = init_params(net, stream.generator())
        arrays = p.arrays()
        opt = AdamState.zeros_like(AdamConfig(lr=lr, beta1=0.9, beta2=0.999), arrays)
        for _ in range(inner_budget):
            Y = sample(q_spec, batch_size, stream)
            tape = Tape()
            vg = bind(tape, p, True)
            y = tape.const(Y)
            grad = input_grad_graph(vg, net, y)
            obj = dc.sub(dc.mean(f.graph(tape, grad)), dc.mean(dc.row_dot(y, grad)))
            grads = dc.backward(tape, obj, vg.leaves())
            if not np.isfinite(obj.value.item()):
                raise dc.NonFiniteError(f"inner minimization diverged in restart {r}")
            adam_step(opt, arrays, [t.data for t in grads], "minimize")
        cand = float(_tail_values(f, IcnnPotential(p, net), Y_eval).mean())
        best = min(best, cand)
    return base - best


@dataclass(frozen=True)
class StabilityReport:
    alpha: float
    eps1: float
    lhs: float
    bound: float
    holds: bool
    lhs_se: float
    slack_se: float
    n: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def stability_check(alpha: float, f, g, q_spec: DistributionSpec, n: int = 100_000, stream: RngStream | None = None):
    """Compare ``E_Q |grad g - grad f*|^2`` with ``(2/alpha) * eps1``.

    ``f`` must be ``alpha``-strongly convex with a closed-form conjugate and
    optimal for the problem at hand, so the maximization gap is zero.  The
    bound holds pointwise, so the Monte-Carlo tolerance is three standard
    errors of the per-sample slack.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    f, g = _as_potential(f), _as_potential(g)
    stream = stream or RngStream(0, "stability")
    Y = sample(q_spec, n, stream)
    T = g.grad(Y)
    err = np.sum((T - f.conjugate_grad(Y)) ** 2, axis=1)
    gap = f.conjugate(Y) + f.value(T) - np.sum(Y * T, axis=1)
    slack = (2.0 / alpha) * gap - err
    se = lambda v: float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0  # noqa: E731
    eps1 = float(gap.mean())
    lhs = float(err.mean())
    bound = 2.0 / alpha * eps1
    slack_se = se(slack)
    return StabilityReport(
        alpha=alpha,
        eps1=eps1,
        lhs=lhs,
        bound=bound,
        holds=bool(lhs <= bound + 3.0 * slack_se + 1e-12),
        lhs_se=se(err),
        slack_se=slack_se,
        n=n,
    )


# ---------------------------------------------------------------------------
# Grid export


GRID_COLUMNS = ("y1", "y2", "T1", "T2", "disp1", "disp2", "potential")


@dataclass
class GridExport:
    bounds: tuple[float, float, float, float]
    resolution: int
    rows: np.ndarray  # [resolution**2, 7], columns GRID_COLUMNS

    def write(self, path, delimiter: str = ",") -> None:
        with Path(path).open("w") as fh:
            fh.write(delimiter.join(GRID_COLUMNS) + "\n")
            for r in self.rows:
                fh.write(delimiter.join(repr(float(v)) for v in r) + "\n")

    @classmethod
    def read(cls, path, delimiter: str = ",") -> "GridExport":
        lines = Path(path).read_text().splitlines()
        if tuple(lines[0].split(delimiter)) != GRID_COLUMNS:
            raise ValueError(f"{path}: unexpected header {lines[0]!r}")
        rows = np.array([[float(v) for v in ln.split(delimiter)] for ln in lines[1:] if ln.strip()])
        res = int(round(np.sqrt(len(rows))))
        b = (rows[:, 0].min(), rows[:, 0].max(), rows[:, 1].min(), rows[:, 1].max())
        return cls(tuple(float(v) for v in b), res, rows)


def grid_points(bounds, resolution: int) -> np.ndarray:
    if resolution < 2:
        raise ValueError("grid resolution must be >= 2")
    if len(bounds) == 2:
        bounds = (bounds[0], bounds[1], bounds[0], bounds[1])
    x0, x1, y0, y1 = (float(b) for b in bounds)
    a, b = np.meshgrid(np.linspace(x0, x1, resolution), np.linspace(y0, y1, resolution), indexing="ij")
    return np.column_stack([a.reshape(-1), b.reshape(-1)])


def export_grid(pg: IcnnParams, g_cfg: IcnnConfig, bounds=(-1.5, 1.5), resolution: int = 50) -> GridExport:
    """Transport, displacement ``grad g(y) - y`` and ``g(y) - |y|^2/2`` on a regular grid."""
    if g_cfg.input_dim != 2:
        raise ValueError(f"grid export needs a 2-D network, got input_dim={g_cfg.input_dim}")
    Y = grid_points(bounds, resolution)
    vals, T = icnn_value_and_grad(pg.astype(np.float64), g_cfg, Y)
    pot = vals - 0.5 * np.sum(Y * Y, axis=1)
    rows = np.column_stack([Y, T, T - Y, pot])
    if len(bounds) == 2:
        bounds = (bounds[0], bounds[1], bounds[0], bounds[1])
    return GridExport(tuple(float(b) for b in bounds), resolution, rows)
