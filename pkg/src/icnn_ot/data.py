"""Seedable samplers for the synthetic source/target distributions."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CHECKER_SOURCE_CENTERS",
    "CHECKER_TARGET_CENTERS",
    "EIGHT_GAUSSIAN_CENTERS",
    "DistributionSpec",
    "RngStream",
    "closed_form_w2",
    "export_batch",
    "sample",
]

KINDS = (
    "checkerboard-source",
    "checkerboard-target",
    "eight-gaussian-source",
    "eight-gaussian-target",
    "isotropic-gaussian",
    "highdim-lowrank-mixture",
)

CHECKER_SOURCE_CENTERS = np.array([(0, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)], dtype=float)
CHECKER_TARGET_CENTERS = np.array([(0, 1), (0, -1), (1, 0), (-1, 0)], dtype=float)
_r = 1.0 / np.sqrt(2.0)
EIGHT_GAUSSIAN_CENTERS = np.array(
    [(1, 0), (_r, _r), (0, 1), (-_r, _r), (-1, 0), (-_r, -_r), (0, -1), (_r, -_r)], dtype=float
)
EIGHT_GAUSSIAN_VAR = 0.5
LOWRANK_MEANS_2D = np.array([(1.4, 1.4), (1.4, -1.4), (-1.4, 1.4), (-1.4, -1.4)])
LOWRANK_VAR = 0.2


@dataclass(frozen=True)
class DistributionSpec:
    """Declarative description of a samplable distribution.

    ``mean`` is only used by ``isotropic-gaussian``; an empty tuple means the
    origin.  ``dim`` is fixed to 2 for the checkerboard and eight-Gaussian
    kinds.
    """

    kind: str
    dim: int = 2
    mean: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported distribution kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValueError(f"distribution dim must be a positive integer, got {self.dim!r}")
        if self.kind.startswith(("checkerboard", "eight-gaussian")) and self.dim != 2:
            raise ValueError(f"{self.kind} is two-dimensional, got dim={self.dim}")
        if self.kind == "highdim-lowrank-mixture" and self.dim < 2:
            raise ValueError("highdim-lowrank-mixture needs dim >= 2")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        if self.mean and len(self.mean) != self.dim:
            raise ValueError(f"mean has length {len(self.mean)}, expected dim={self.dim}")
        if self.mean and self.kind != "isotropic-gaussian":
            raise ValueError(f"{self.kind} does not take a mean")

    @classmethod
    def gaussian(cls, dim: int, alpha: float = 0.0) -> "DistributionSpec":
        """``N(alpha * 1, I_dim)``."""
        return cls("isotropic-gaussian", dim, (float(alpha),) * dim if alpha else ())

    def mean_vector(self) -> np.ndarray:
        if self.kind == "isotropic-gaussian":
            return np.array(self.mean) if self.mean else np.zeros(self.dim)
        if self.kind in ("checkerboard-source",):
            return CHECKER_SOURCE_CENTERS.mean(axis=0)
        if self.kind == "checkerboard-target":
            return CHECKER_TARGET_CENTERS.mean(axis=0)
        return np.zeros(self.dim)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.mean:
            d["mean"] = list(self.mean)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        unknown = set(d) - {"kind", "dim", "mean", "alpha"}
        if unknown:
            raise ValueError(f"unknown distribution keys: {sorted(unknown)}")
        if "alpha" in d:
            if d.get("kind") != "isotropic-gaussian":
                raise ValueError(f"'alpha' only applies to isotropic-gaussian, not {d.get('kind')!r}")
            if "mean" in d:
                raise ValueError("give either 'mean' or 'alpha', not both")
            return cls.gaussian(int(d.get("dim", 2)), float(d["alpha"]))
        return cls(d["kind"], int(d.get("dim", 2)), tuple(d.get("mean", ())))


@dataclass
class RngStream:
    """Independent, reproducible stream derived from ``(seed, label)``.

    Counter-based: draw number ``c`` uses a Philox generator keyed by
    ``(seed, crc32(label), c)``, so streams with distinct labels never share
    state and a stream can be resumed from its counter alone.
    """

    seed: int
    label: str
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = zlib.crc32(self.label.encode("utf-8"))
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(key, self.counter))
        self.counter += 1
        return np.random.Generator(np.random.Philox(ss))


def sample(spec: DistributionSpec, n: int, stream: RngStream, dtype=np.float64) -> np.ndarray:
    """``n`` i.i.d. draws from ``spec`` as an ``[n, dim]`` array."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    rng = stream.generator()
    k = spec.kind
    if k == "checkerboard-source" or k == "checkerboard-target":
        centers = CHECKER_SOURCE_CENTERS if k == "checkerboard-source" else CHECKER_TARGET_CENTERS
        idx = rng.integers(len(centers), size=n)
        out = centers[idx] + rng.uniform(-0.5, 0.5, size=(n, 2))
    elif k == "eight-gaussian-source":
        out = rng.standard_normal((n, 2))
    elif k == "eight-gaussian-target":
        idx = rng.integers(len(EIGHT_GAUSSIAN_CENTERS), size=n)
        out = EIGHT_GAUSSIAN_CENTERS[idx] + np.sqrt(EIGHT_GAUSSIAN_VAR) * rng.standard_normal((n, 2))
    elif k == "isotropic-gaussian":
        out = rng.standard_normal((n, spec.dim)) + spec.mean_vector()
    elif k == "highdim-lowrank-mixture":
        idx = rng.integers(4, size=n)
        out = np.zeros((n, spec.dim))
        out[:, :2] = LOWRANK_MEANS_2D[idx] + np.sqrt(LOWRANK_VAR) * rng.standard_normal((n, 2))
    else:  # pragma: no cover - guarded by DistributionSpec
        raise ValueError(f"unsupported distribution kind {k!r}")
    return out.astype(dtype, copy=False)


def closed_form_w2(a: DistributionSpec, b: DistributionSpec):
    """Squared W2 (cost ``|x-y|^2 / 2``) between identity-covariance Gaussians.

    Returns ``None`` when no closed form applies.
    """
    if a.kind != "isotropic-gaussian" or b.kind != "isotropic-gaussian" or a.dim != b.dim:
        return None
    diff = a.mean_vector() - b.mean_vector()
    return 0.5 * float(diff @ diff)


def export_batch(path, batch: np.ndarray, delimiter: str = ",") -> None:
    """One sample per line, full round-trip precision."""
    batch = np.atleast_2d(batch)
    with Path(path).open("w") as fh:
        for row in batch:
            fh.write(delimiter.join(repr(float(v)) for v in row) + "\n")


def load_batch(path, delimiter: str = ",") -> np.ndarray:
    rows = [line.split(delimiter) for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in r] for r in rows])
