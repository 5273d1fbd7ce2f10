"""Tabulate the stability bound on quadratic fixtures.

For f = alpha/2 |x|^2 and g = (1 + delta) f*, compare E|grad g - grad f*|^2
under N(0, I_d) with (2 / alpha) eps1, where eps1 is computed from the closed
form conjugate and (optionally) from re-training g.

    python scripts/stability_sweep.py --alphas 1 2 --deltas 0 0.05 0.1 0.2 --retrain 800
"""

import argparse

from icnn_ot.data import DistributionSpec, RngStream
from icnn_ot.evaluation import Quadratic, eps1_estimate, stability_check
from icnn_ot.icnn import quadratic_params


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--alphas", type=float, nargs="+", default=[1.0])
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.0, 0.05, 0.1])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--retrain", type=int, default=0, help="inner budget for the re-trained eps1 estimate (0: skip)")
    args = ap.parse_args()

    q = DistributionSpec.gaussian(args.dim)
    print(f"{'alpha':>6} {'delta':>6} {'lhs':>10} {'bound':>10} {'eps1':>10} {'eps1~':>10} holds")
    for alpha in args.alphas:
        f = Quadratic(alpha)
        for delta in args.deltas:
            g = quadratic_params(args.dim, curvature=(1.0 + delta) / alpha)
            rep = stability_check(alpha, f, g, q, n=args.n, stream=RngStream(0, "stability"))
            est = ""
            if args.retrain:
                est = f"{eps1_estimate(f, g, q, args.retrain, stream=RngStream(0, 'eps1')):10.5f}"
            print(f"{alpha:6.2f} {delta:6.3f} {rep.lhs:10.5f} {rep.bound:10.5f} {rep.eps1:10.5f} {est:>10} {rep.holds}")


if __name__ == "__main__":
    main()
