"""Sweep the EAGLE fairness weight on the synthetic task and print variance and accuracy per value."""

import argparse

import numpy as np

from fairfed import datasets as ds
from fairfed.config import LAMBDA_GRID
from fairfed.federation import ExperimentConfig, estimate_local_optima, initial_params, run
from fairfed.tensor import ModelSpec

SPEC = ModelSpec("linear", 2, 2)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--lambdas", default=",".join(str(v) for v in (0.0, *LAMBDA_GRID)))
    p.add_argument("--seeds", default="0,42,100,200")
    p.add_argument("--rounds", type=int, default=300)
    p.add_argument("--eta", type=float, default=0.1)
    args = p.parse_args()
    lambdas = [float(v) for v in args.lambdas.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]

    rows = {lam: [] for lam in lambdas}
    for seed in seeds:
        clients = ds.gen_synthetic(seed=seed)
        base = ExperimentConfig("eagle", SPEC, rounds=args.rounds, eta=args.eta, lam=0.0, seed=seed)
        lstar = estimate_local_optima(clients, SPEC, base.local_opt, base.gap_split, initial_params(base))
        for lam in lambdas:
            trace = run(ExperimentConfig("eagle", SPEC, rounds=args.rounds, eta=args.eta, lam=lam, seed=seed),
                        clients, lstar)
            final = trace.records[-1]
            rows[lam].append((final.gap_variance, final.balanced_accuracy, final.gap_max))

    print(f"{'lambda':>8} {'variance':>10} {'accuracy':>10} {'max gap':>10}")
    for lam, vals in rows.items():
        v, a, g = np.mean(vals, axis=0)
        print(f"{lam:>8g} {v:>10.5f} {a:>10.4f} {g:>10.4f}")


if __name__ == "__main__":
    main()
