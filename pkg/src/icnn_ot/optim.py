"""Adam with a step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import NonFiniteError

__all__ = ["AdamConfig", "AdamState", "LrSchedule", "adam_step", "current_lr"]


@dataclass(frozen=True)
class LrSchedule:
    decay_factor: float = 1.0
    decay_every: int = 1

    def __post_init__(self):
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be a positive integer, got {self.decay_every}")


def current_lr(sched: LrSchedule, base_lr: float, t: int) -> float:
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    return base_lr * sched.decay_factor ** (t // sched.decay_every)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    schedule: LrSchedule = field(default_factory=LrSchedule)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("Adam eps must be positive")


@dataclass
class AdamState:
    config: AdamConfig
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, config: AdamConfig, params) -> "AdamState":
        return cls(config, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads, direction: str = "minimize", lr: float | None = None):
    """One bias-corrected Adam update.

    ``params`` are updated in place and returned; ``state`` is advanced.
    ``direction="maximize"`` ascends by negating the gradient first.
    ``lr`` overrides the configured base rate (used for scheduling).
    """
    if direction not in ("minimize", "maximize"):
        raise ValueError(f"direction must be 'minimize' or 'maximize', got {direction!r}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state have different lengths")
    cfg = state.config
    lr = cfg.lr if lr is None else lr
    sign = 1.0 if direction == "minimize" else -1.0
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.data if hasattr(g, "data") and not isinstance(g, np.ndarray) else g
        if p.shape != g.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {i} at step {t}")
        if sign < 0:
            g = -g
        m, v = state.m[i], state.v[i]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state
