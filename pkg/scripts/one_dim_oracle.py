"""Compare the learned W2 estimate in 1-D with exact sorted matching.

    python scripts/one_dim_oracle.py --config configs/gaussian_1d.json
"""

import argparse

from icnn_ot._runtime import tune_allocator
from icnn_ot.config import load_config
from icnn_ot.data import RngStream, sample
from icnn_ot.evaluation import sorted_matching_w2
from icnn_ot.train import evaluate_w2, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", required=True)
    ap.add_argument("--n", type=int, default=100_000)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if cfg.dim != 1:
        ap.error("config must be one-dimensional")

    tune_allocator()
    state, records = train(cfg.train, cfg.f_icnn(), cfg.g_icnn(), cfg.source, cfg.target)
    for r in records:
        print(r.to_json(with_wall_clock=True))
    X = sample(cfg.target, args.n, RngStream(cfg.train.seed, "oracle-P"))
    Y = sample(cfg.source, args.n, RngStream(cfg.train.seed, "oracle-Q"))
    _, _, w2 = evaluate_w2(state.f, state.f_cfg, state.g, state.g_cfg, X, Y)
    exact = sorted_matching_w2(X, Y)
    print(f"learned W2 estimate {w2:.5f}, sorted matching {exact:.5f}, relative gap {abs(w2 - exact) / exact:.3%}")


if __name__ == "__main__":
    main()
