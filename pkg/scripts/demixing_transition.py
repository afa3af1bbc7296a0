"""Success-rate grid for demixing and the 50% contour against r.

    python scripts/demixing_transition.py --trials 20 --out demixing.csv
"""

import argparse

from lowrank.harness import ExperimentConfig, linear_fit, phase_transition_sweep, transition_location


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--K", type=int, default=4, help="K = N, the per-component dimension")
    p.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--L-max", type=int, default=64)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="demixing_transition.csv")
    args = p.parse_args()

    cfg = ExperimentConfig(ensemble="demixing", n=[args.K], r=args.ranks, m=list(range(4, args.L_max, 4)),
                           trials=args.trials, seed=args.seed, success_threshold=1e-2,
                           max_iters=3000, threads=args.threads, out=args.out)
    res = phase_transition_sweep(cfg)
    locs = [transition_location(res.summary, r=r) for r in args.ranks]
    for r, loc in zip(args.ranks, locs):
        print(f"r = {r}: 50% contour at L = {loc:.1f} (counting threshold {r * args.K * args.K})")
    fit = linear_fit(args.ranks, locs)
    print(f"linear fit: slope {fit['slope']:.2f}, R^2 {fit['r2']:.4f}; wrote {args.out}")


if __name__ == "__main__":
    main()
