"""Command line: ``icnn-ot {train,eval,export-grid,selfcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ._runtime import tune_allocator
from .checks import corrupted_second_derivative, run_selfcheck
from .config import ConfigError, RunConfig, load_config
from .data import DistributionSpec, RngStream, closed_form_w2, sample
from .evaluation import cell_masses, export_grid, mean_transport_error, support_coverage
from .icnn import load_checkpoint, save_checkpoint
from .train import TrainingDiverged, evaluate_w2, init_state, train, transport

log = logging.getLogger("icnn_ot")


def _write_checkpoint(path: Path, state, cfg: RunConfig) -> None:
    save_checkpoint(
        path,
        {"f": (state.f, state.f_cfg), "g": (state.g, state.g_cfg)},
        iteration=state.t,
        seed=cfg.train.seed,
        source=cfg.source.to_dict(),
        target=cfg.target.to_dict(),
    )


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.init_seed is not None:
            cfg = cfg.with_init_seed(args.init_seed)
        if args.out is not None:
            cfg = cfg.with_out_dir(args.out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = Path(cfg.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.resolved.json")
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")
    timing_path = out / "timing.jsonl"
    timing_path.write_text("")

    def sink(rec, state):
        with metrics_path.open("a") as fh:
            fh.write(rec.to_json() + "\n")
        with timing_path.open("a") as fh:
            fh.write(json.dumps({"iter": rec.iter, "wall_clock": rec.wall_clock}) + "\n")
        _write_checkpoint(out / "checkpoints" / f"iter_{rec.iter:07d}.json", state, cfg)

    tune_allocator()
    state = init_state(cfg.train, cfg.f_icnn(), cfg.g_icnn())
    try:
        state, _ = train(cfg.train, cfg.f_icnn(), cfg.g_icnn(), cfg.source, cfg.target, sinks=[sink], state=state)
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        (out / "diverged.json").write_text(
            json.dumps({"message": str(e), "iteration": e.iteration, "inner": e.inner, "seed": e.seed}) + "\n"
        )
        return 3
    _write_checkpoint(out / "checkpoint.json", state, cfg)
    log.info("wrote %s", out / "checkpoint.json")
    return 0


def eval_report(nets: dict, meta: dict, source: DistributionSpec, target: DistributionSpec, n: int, seed: int, tau=0.1):
    pf, f_cfg = nets["f"]
    pg, g_cfg = nets["g"]
    if source.dim != g_cfg.input_dim or target.dim != f_cfg.input_dim:
        raise ValueError(f"checkpoint networks have input_dim {g_cfg.input_dim}, distributions have dim {source.dim}")
    X = sample(target, n, RngStream(seed, "eval-P"))
    Y = sample(source, n, RngStream(seed, "eval-Q"))
    J, c, w2 = evaluate_w2(pf, f_cfg, pg, g_cfg, X, Y)
    report = {
        "iteration": meta.get("iteration"),
        "n_samples": n,
        "seed": seed,
        "source": source.to_dict(),
        "target": target.to_dict(),
        "J": J,
        "c_pq": c,
        "w2_estimate": w2,
        "w2_closed_form": closed_form_w2(source, target),
    }
    T = transport(pg, g_cfg, Y)
    if target.kind == "isotropic-gaussian":
        absolute, relative = mean_transport_error(T, target.mean_vector())
        report["mean_transport_error"] = {"absolute": absolute, "relative_percent": relative}
    if target.kind in ("checkerboard-target", "eight-gaussian-target"):
        report["support_coverage"] = {"tau": tau, "fraction": support_coverage(T, target, tau)}
        report["cell_masses"] = cell_masses(T, target).tolist()
    return report


def cmd_eval(args) -> int:
    try:
        nets, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: cannot read checkpoint {args.checkpoint}: {e}", file=sys.stderr)
        return 2
    tau, n = 0.1, args.n
    if args.config:
        try:
            cfg = load_config(args.config)
        except ConfigError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        source, target, tau = cfg.source, cfg.target, cfg.eval.tau
        n = n or cfg.eval.n_samples
    elif "source" in meta and "target" in meta:
        source, target = DistributionSpec.from_dict(meta["source"]), DistributionSpec.from_dict(meta["target"])
    else:
        print("error: checkpoint carries no distributions; pass --config", file=sys.stderr)
        return 2
    if args.target:
        target = DistributionSpec.from_dict(json.loads(args.target))
    seed = args.seed if args.seed is not None else int(meta.get("seed", 0))
    try:
        report = eval_report(nets, meta, source, target, n or 100_000, seed, tau)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _parse_bounds(s: str):
    vals = [float(v) for v in s.split(",")]
    if len(vals) == 2:
        vals = vals * 2
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("bounds must be 'lo,hi' or 'x0,x1,y0,y1'")
    return tuple(vals)


def cmd_export_grid(args) -> int:
    try:
        nets, _ = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: cannot read checkpoint {args.checkpoint}: {e}", file=sys.stderr)
        return 2
    pg, g_cfg = nets["g"]
    try:
        grid = export_grid(pg, g_cfg, args.bounds, args.resolution)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    grid.write(args.out)
    return 0


def cmd_selfcheck(args) -> int:
    started = time.perf_counter()
    if args.corrupt_second_derivative:
        with corrupted_second_derivative():
            results = run_selfcheck(args.seed or 0)
    else:
        results = run_selfcheck(args.seed or 0)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"selfcheck {'passed' if ok else 'FAILED'} in {time.perf_counter() - started:.1f}s")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="icnn-ot", description="Optimal transport maps with input convex networks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the minimax training")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", type=int, help="network initialization seed (default: --seed)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="take source/target/eval options from this config")
    p.add_argument("--target", help="target distribution as JSON, overrides the checkpoint's")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="evaluation sample size")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-grid", help="write transport/displacement/potential on a grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bounds", type=_parse_bounds, default=(-1.5, 1.5, -1.5, 1.5))
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_grid)

    p = sub.add_parser("selfcheck", help="gradient, convexity and stability self-checks")
    p.add_argument("--seed", type=int)
    p.add_argument("--corrupt-second-derivative", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
