"""Run configuration: JSON documents with strict keys."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import DistributionSpec
from .diffcore import Activation
from .icnn import IcnnConfig
from .optim import AdamConfig, LrSchedule
from .train import TrainConfig

__all__ = ["ConfigError", "EvalOptions", "NetSpec", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _reject_unknown(section: str, d: dict, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


@dataclass(frozen=True)
class NetSpec:
    hidden_width: int = 64
    num_layers: int = 4
    beta: float = 0.2
    first_activation: str = "squared-leaky-relu"
    hidden_activation: str = "leaky-relu"

    def icnn(self, dim: int) -> IcnnConfig:
        return IcnnConfig(
            input_dim=dim,
            hidden_width=self.hidden_width,
            num_layers=self.num_layers,
            hidden_activation=Activation(self.hidden_activation, self.beta),
            first_activation=Activation(self.first_activation, self.beta),
        )


@dataclass(frozen=True)
class EvalOptions:
    n_samples: int = 100_000
    tau: float = 0.1
    grid_bounds: tuple[float, float, float, float] = (-1.5, 1.5, -1.5, 1.5)
    grid_resolution: int = 50


_OPTIM_KEYS = ("lr", "beta1", "beta2", "eps", "decay_factor", "decay_every")
_TRAIN_KEYS = (
    "batch_size",
    "inner_iters",
    "total_iters",
    "reg",
    "precision",
    "eval_every",
    "eval_batch",
    "init_scale",
)


@dataclass(frozen=True)
class RunConfig:
    source: DistributionSpec
    target: DistributionSpec
    train: TrainConfig
    f_net: NetSpec = field(default_factory=NetSpec)
    g_net: NetSpec = field(default_factory=NetSpec)
    out_dir: str = "runs/default"
    eval: EvalOptions = field(default_factory=EvalOptions)

    @property
    def dim(self) -> int:
        return self.source.dim

    def f_icnn(self) -> IcnnConfig:
        return self.f_net.icnn(self.dim)

    def g_icnn(self) -> IcnnConfig:
        return self.g_net.icnn(self.dim)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=int(seed)))

    def with_init_seed(self, init_seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, init_seed=int(init_seed)))

    def with_out_dir(self, out_dir) -> "RunConfig":
        return replace(self, out_dir=str(out_dir))

    # -- (de)serialization -------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        top = ("seed", "init_seed", "out_dir", "source", "target", "f_net", "g_net", "train", "f_optim", "g_optim", "eval")
        _reject_unknown("config", d, top)
        for req in ("source", "target"):
            if req not in d:
                raise ConfigError(f"config: missing required section '{req}'")
        try:
            source = DistributionSpec.from_dict(d["source"])
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"source: {e}") from None
        try:
            target = DistributionSpec.from_dict(d["target"])
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"target: {e}") from None
        if source.dim != target.dim:
            raise ConfigError(f"target.dim: {target.dim} does not match source.dim {source.dim}")

        nets = {}
        for name in ("f_net", "g_net"):
            sec = d.get(name, {})
            _reject_unknown(name, sec, [f.name for f in fields(NetSpec)])
            try:
                nets[name] = NetSpec(**sec)
                nets[name].icnn(source.dim)
            except (ValueError, TypeError) as e:
                raise ConfigError(f"{name}: {e}") from None

        optims = {}
        for name in ("f_optim", "g_optim"):
            sec = d.get(name, {})
            _reject_unknown(name, sec, _OPTIM_KEYS)
            sec = dict(sec)
            try:
                sched = LrSchedule(sec.pop("decay_factor", 1.0), sec.pop("decay_every", 1))
                optims[name] = AdamConfig(schedule=sched, **sec)
            except (ValueError, TypeError) as e:
                raise ConfigError(f"{name}: {e}") from None

        tr = d.get("train", {})
        _reject_unknown("train", tr, _TRAIN_KEYS)
        tr = dict(tr)
        if "batch_size" not in tr:
            # desk recipe: larger batches for the checkerboard
            tr["batch_size"] = 1024 if target.kind.startswith("checkerboard") else 256
        try:
            train = TrainConfig(
                f_optim=optims["f_optim"],
                g_optim=optims["g_optim"],
                seed=int(d.get("seed", 0)),
                init_seed=None if d.get("init_seed") is None else int(d["init_seed"]),
                **tr,
            )
        except (ValueError, TypeError) as e:
            raise ConfigError(f"train: {e}") from None

        ev = d.get("eval", {})
        _reject_unknown("eval", ev, [f.name for f in fields(EvalOptions)])
        ev = dict(ev)
        if "grid_bounds" in ev:
            b = [float(v) for v in ev["grid_bounds"]]
            if len(b) == 2:
                b = b * 2
            if len(b) != 4:
                raise ConfigError("eval.grid_bounds: expected 2 or 4 numbers")
            ev["grid_bounds"] = tuple(b)
        try:
            evo = EvalOptions(**ev)
        except TypeError as e:
            raise ConfigError(f"eval: {e}") from None
        if evo.grid_resolution < 2:
            raise ConfigError("eval.grid_resolution: must be >= 2")
        if evo.n_samples < 1:
            raise ConfigError("eval.n_samples: must be >= 1")
        return cls(
            source=source,
            target=target,
            train=train,
            f_net=nets["f_net"],
            g_net=nets["g_net"],
            out_dir=str(d.get("out_dir", "runs/default")),
            eval=evo,
        )

    def to_dict(self) -> dict:
        """Fully resolved form; feeding it back reproduces the same run."""
        tr = self.train

        def optim(o: AdamConfig) -> dict:
            return {
                "lr": o.lr,
                "beta1": o.beta1,
                "beta2": o.beta2,
                "eps": o.eps,
                "decay_factor": o.schedule.decay_factor,
                "decay_every": o.schedule.decay_every,
            }

        return {
            "seed": tr.seed,
            "init_seed": tr.init_seed,
            "out_dir": self.out_dir,
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "f_net": vars(self.f_net).copy(),
            "g_net": vars(self.g_net).copy(),
            "train": {k: getattr(tr, k) for k in _TRAIN_KEYS},
            "f_optim": optim(tr.f_optim),
            "g_optim": optim(tr.g_optim),
            "eval": {
                "n_samples": self.eval.n_samples,
                "tau": self.eval.tau,
                "grid_bounds": list(self.eval.grid_bounds),
                "grid_resolution": self.eval.grid_resolution,
            },
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from None
    return RunConfig.from_dict(doc)
