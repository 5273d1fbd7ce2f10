"""Train a Gaussian pair N(0, I_d) -> N(alpha 1, I_d) and compare with the closed form.

    python scripts/gaussian_pair.py --config configs/gaussian_16d.json
    python scripts/gaussian_pair.py --config configs/gaussian_2d.json --alpha 5 --iters 5000
"""

import argparse
import json
from dataclasses import replace

from icnn_ot._runtime import tune_allocator
from icnn_ot.cli import eval_report
from icnn_ot.config import load_config
from icnn_ot.data import DistributionSpec
from icnn_ot.train import train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", required=True)
    ap.add_argument("--alpha", type=float, help="override the target mean alpha * (1, ..., 1)")
    ap.add_argument("--iters", type=int, help="override total_iters")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--n-eval", type=int, default=100_000)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.alpha is not None:
        cfg = replace(cfg, target=DistributionSpec.gaussian(cfg.dim, args.alpha))
    if args.iters is not None:
        cfg = replace(cfg, train=replace(cfg.train, total_iters=args.iters))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if cfg.target.kind != "isotropic-gaussian" or cfg.source.kind != "isotropic-gaussian":
        ap.error("config must describe an isotropic Gaussian pair")

    tune_allocator()
    state, records = train(cfg.train, cfg.f_icnn(), cfg.g_icnn(), cfg.source, cfg.target)
    for r in records:
        print(r.to_json(with_wall_clock=True))
    nets = {"f": (state.f, state.f_cfg), "g": (state.g, state.g_cfg)}
    rep = eval_report(nets, {"iteration": state.t}, cfg.source, cfg.target, args.n_eval, cfg.train.seed)
    print(json.dumps(rep, indent=2))


if __name__ == "__main__":
    main()
