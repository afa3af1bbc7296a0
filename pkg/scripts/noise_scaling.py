"""Error against noise level for the Gaussian and blind-deconvolution ensembles.

For blind deconvolution both noise models are run: "isotropic" noise is
mostly orthogonal to the range of the operator and gets diluted as L
grows, "range" noise is drawn inside it.

    python scripts/noise_scaling.py --trials 20
"""

import argparse

from lowrank.harness import ExperimentConfig, noise_sweep, write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=8)
    p.add_argument("--prefix", default="noise")
    args = p.parse_args()

    gauss = noise_sweep(ExperimentConfig(experiment="noise", ensemble="gaussian", n=[10], m=[60, 120],
                                         tau=[1e-3, 1e-2, 1e-1], trials=args.trials, seed=args.seed))
    write_csv(gauss, f"{args.prefix}_gaussian.csv")
    for f in gauss.fits:
        print(f"gaussian m={f['m']}: slope {f['slope']:.3f}")
    for model in ("range", "isotropic"):
        res = noise_sweep(ExperimentConfig(experiment="noise", ensemble="blind_deconv", signal="flat",
                                           noise_model=model, n=[4], m=[64, 128, 256],
                                           tau=[0.002, 0.02, 0.2], trials=args.trials, seed=args.seed,
                                           conic_samples=0))
        write_csv(res, f"{args.prefix}_blind_deconv_{model}.csv")
        for s in res.summary:
            print(f"blind deconvolution ({model}) L={s['m']} tau={s['tau']:g}: "
                  f"error/tau {s['error_over_tau']:.3f}")


if __name__ == "__main__":
    main()
