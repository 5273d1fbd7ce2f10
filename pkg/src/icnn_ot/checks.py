"""Numerical self-checks: finite-difference gradients, Jensen convexity, stability fixture."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .data import DistributionSpec, RngStream
from .diffcore import Activation, finite_diff_grad
from .evaluation import Quadratic, stability_check
from .icnn import (
    IcnnConfig,
    IcnnParams,
    icnn_forward,
    icnn_input_grad,
    init_params,
    project_nonneg,
    quadratic_params,
)
from .train import objective_grads, objective_J

__all__ = [
    "CheckResult",
    "convexity_violation",
    "corrupted_second_derivative",
    "objective_grad_error",
    "input_grad_error",
    "min_abs_preactivation",
    "rel_err",
    "run_selfcheck",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.measured < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured {self.measured:.3e} (tolerance {self.tolerance:.1e})"


def rel_err(a, b) -> float:
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def _preacts(p: IcnnParams, cfg: IcnnConfig, X: np.ndarray) -> list[np.ndarray]:
    acts = cfg.activations()
    out, z = [], None
    for l in range(cfg.num_layers):
        u = X @ p.A[l].T + p.b[l]
        if l > 0:
            u = u + z @ p.W[l - 1].T
        out.append(u)
        z = acts[l].value(u)
    return out


def min_abs_preactivation(p: IcnnParams, cfg: IcnnConfig, X: np.ndarray) -> float:
    """Smallest |pre-activation| over all non-affine layers (distance to a kink)."""
    us = _preacts(p, cfg, np.atleast_2d(X))[:-1]
    return min((float(np.abs(u).min()) for u in us), default=np.inf)


def random_icnn(rng: np.random.Generator, cfg: IcnnConfig, signed_w: bool = False) -> IcnnParams:
    p = init_params(cfg, rng)
    if signed_w:
        # g may leave the nonnegative cone during training
        p = IcnnParams([w * rng.choice([-1.0, 1.0], size=w.shape) for w in p.W], p.A, p.b)
    return p


def input_grad_error(p: IcnnParams, cfg: IcnnConfig, x: np.ndarray, h: float = 1e-6) -> float:
    fd = finite_diff_grad(lambda v: icnn_forward(p, cfg, v), x, h).data
    return rel_err(icnn_input_grad(p, cfg, x), fd)


def objective_grad_error(pf, pg, f_cfg, g_cfg, X, Y, lam: float = 0.0, h: float = 1e-6) -> tuple[float, float]:
    """Relative errors of dJ/dtheta_f and d(J+R)/dtheta_g against central differences."""
    _, gf, gg = objective_grads(pf, pg, f_cfg, g_cfg, X, Y, lam=lam)

    def fd_for(which: str) -> list[np.ndarray]:
        p = pf if which == "f" else pg
        arrays = p.arrays()
        grads = []
        for i, a in enumerate(arrays):
            def fn(v, i=i):
                trial = [x if j != i else v for j, x in enumerate(arrays)]
                q = IcnnParams.from_arrays(trial, len(p.A))
                if which == "f":
                    return objective_J(q, pg, f_cfg, g_cfg, X, Y)
                return objective_J(pf, q, f_cfg, g_cfg, X, Y) + lam * sum(
                    float(np.sum(np.maximum(-w, 0.0) ** 2)) for w in q.W
                )

            grads.append(finite_diff_grad(fn, a, h).data)
        return grads

    return rel_err(gf, fd_for("f")), rel_err(gg, fd_for("g"))


def convexity_violation(p: IcnnParams, cfg: IcnnConfig, rng: np.random.Generator, n_pairs: int = 1000, scale=2.0):
    """Largest ``f(t x1 + (1-t) x2) - (t f(x1) + (1-t) f(x2))`` over random triples."""
    x1 = rng.standard_normal((n_pairs, cfg.input_dim)) * scale
    x2 = rng.standard_normal((n_pairs, cfg.input_dim)) * scale
    t = rng.uniform(0.0, 1.0, size=n_pairs)
    mid = t[:, None] * x1 + (1 - t[:, None]) * x2
    lhs = icnn_forward(p, cfg, mid)
    rhs = t * icnn_forward(p, cfg, x1) + (1 - t) * icnn_forward(p, cfg, x2)
    return float(np.max(lhs - rhs))


def _kink_free_pair(rng, f_cfg, g_cfg, M, margin=1e-3, tries=200):
    for _ in range(tries):
        pf = project_nonneg(random_icnn(rng, f_cfg))
        pg = random_icnn(rng, g_cfg, signed_w=True)
        X = rng.standard_normal((M, f_cfg.input_dim))
        Y = rng.standard_normal((M, g_cfg.input_dim))
        T = icnn_input_grad(pg, g_cfg, Y)
        if min(
            min_abs_preactivation(pg, g_cfg, Y),
            min_abs_preactivation(pf, f_cfg, X),
            min_abs_preactivation(pf, f_cfg, T),
        ) > margin:
            return pf, pg, X, Y
    raise RuntimeError("could not draw a kink-free configuration")


def random_gradient_cases(seed: int, n: int = 20, max_d=4, max_m=8, max_L=3, M=4):
    """Kink-free random (f, g, X, Y) problems for gradient checking."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        d = int(rng.integers(1, max_d + 1))
        m = int(rng.integers(1, max_m + 1))
        L = int(rng.integers(1, max_L + 1))
        cfg = IcnnConfig(d, m, L)
        yield (cfg, *_kink_free_pair(rng, cfg, cfg, M))


@contextlib.contextmanager
def corrupted_second_derivative(factor: float = 1.5):
    """Negative-control hook: scale every activation's second derivative."""
    original = Activation.second

    def bad(self, t):
        return factor * original(self, t) + (factor - 1.0)

    Activation.second = bad
    try:
        yield
    finally:
        Activation.second = original


def run_selfcheck(seed: int = 0, n_cases: int = 10) -> list[CheckResult]:
    results: list[CheckResult] = []
    worst_in, worst_f, worst_g = 0.0, 0.0, 0.0
    for cfg, pf, pg, X, Y in random_gradient_cases(seed, n_cases):
        worst_in = max(worst_in, input_grad_error(pg, cfg, Y[0]))
        ef, eg = objective_grad_error(pf, pg, cfg, cfg, X, Y, lam=1.0)
        worst_f, worst_g = max(worst_f, ef), max(worst_g, eg)
    results.append(CheckResult("ICNN input gradient vs finite differences", worst_in, 1e-6))
    results.append(CheckResult("dJ/dtheta_f vs finite differences", worst_f, 1e-4))
    results.append(CheckResult("d(J+R)/dtheta_g vs finite differences", worst_g, 1e-4))

    rng = np.random.default_rng(seed + 1)
    worst_cvx = -np.inf
    for _ in range(5):
        cfg = IcnnConfig(int(rng.integers(1, 5)), int(rng.integers(2, 16)), int(rng.integers(2, 5)))
        p = project_nonneg(random_icnn(rng, cfg, signed_w=True))
        worst_cvx = max(worst_cvx, convexity_violation(p, cfg, rng))
    results.append(CheckResult("Jensen violation after projection", max(worst_cvx, 0.0), 1e-9))

    q = DistributionSpec.gaussian(2)
    pg, g_cfg = quadratic_params(2, curvature=1.1)
    rep = stability_check(1.0, Quadratic(1.0), (pg, g_cfg), q, n=20000, stream=RngStream(seed, "selfcheck"))
    rel = abs(rep.lhs - rep.bound) / max(rep.bound, 1e-12)
    results.append(CheckResult("stability bound (quadratic, delta=0.1) saturation gap", rel, 1e-2))
    results.append(CheckResult("stability bound violation", max(rep.lhs - rep.bound - 3 * rep.slack_se, 0.0), 1e-12))
    return results
