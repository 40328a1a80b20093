"""Run FedAvg, EAGLE, q-FFL and AFL on shared splits and print a final-round table.

Each seed builds the client datasets and local optima once, then every
algorithm variant trains from the same initial model.

    python3 scripts/compare_algorithms.py                          # synthetic task
    python3 scripts/compare_algorithms.py --dataset emnist \\
        --emnist-images IMAGES --emnist-labels LABELS --emnist-subset 20000 --rounds 500
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from fairfed import cli, metrics
from fairfed.config import parse_config
from fairfed.federation import estimate_local_optima, initial_params, run, with_algorithm
from fairfed.tensor import loss


def floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def variants(args):
    yield "fedavg", {}
    for lam in args.lambdas:
        yield f"eagle lambda={lam:g}", {"algorithm": "eagle", "lam": lam}
    for q in args.qs:
        yield f"qffl q={q:g}", {"algorithm": "qffl", "q": q}
    for step in args.afl_steps:
        yield f"afl step={step:g}", {"algorithm": "afl", "afl_step": step}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--dataset", default="synthetic", choices=("synthetic", "emnist"))
    p.add_argument("--emnist-images")
    p.add_argument("--emnist-labels")
    p.add_argument("--emnist-subset", default="full")
    p.add_argument("--alpha", default="0.1")
    p.add_argument("--model", default="linear")
    p.add_argument("--rounds", default="300")
    p.add_argument("--eta", default="0.1")
    p.add_argument("--seeds", default="0,42,100,200")
    p.add_argument("--lambdas", type=floats, default=[2.0])
    p.add_argument("--qs", type=floats, default=[5.0])
    p.add_argument("--afl-steps", type=floats, default=[0.1])
    p.add_argument("--workers", default="1")
    p.add_argument("--out", type=Path, help="write one CSV trace per (variant, seed)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    overrides = {
        "algorithm": "fedavg", "dataset": args.dataset, "alpha": args.alpha, "model": args.model,
        "rounds": args.rounds, "eta": args.eta, "seeds": args.seeds, "workers": args.workers,
        "emnist_subset": args.emnist_subset,
    }
    if args.dataset == "emnist":
        overrides.update(emnist_images=args.emnist_images, emnist_labels=args.emnist_labels)
    manifest = parse_config("", overrides, env={"FAIRFED_OUT": str(args.out or ".")})

    finals, client_losses = {}, {}
    for seed in manifest.seeds:
        clients, spec = cli.build_datasets(manifest, seed)
        base = manifest.experiment_config(seed, spec)
        lstar = estimate_local_optima(clients, spec, base.local_opt, base.gap_split, initial_params(base), base.workers)
        for name, changes in variants(args):
            alg = changes.pop("algorithm", "fedavg")
            config = replace(with_algorithm(base, alg), **changes)
            trace = run(config, clients, lstar)
            finals.setdefault(name, []).append(trace.records[-1])
            client_losses.setdefault(name, []).append([loss(spec, trace.final_params, c.train) for c in clients])
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / f"{name.replace(' ', '_')}_{seed}.csv").write_bytes(metrics.emit_csv(trace.records))
            logging.info("seed %d  %-20s variance %.5f", seed, name, trace.records[-1].gap_variance)

    cols = ("gap_max", "gap_min", "gap_variance", "balanced_accuracy")
    print(f"\n{'algorithm':<22}" + "".join(f"{c:>22}" for c in cols) + "   train loss per client")
    for name, records in finals.items():
        stats = metrics.aggregate_final(records)
        cells = "".join(f"{stats[c]['mean']:>12.4f} ± {stats[c]['std']:<7.4f}" for c in cols)
        per_client = np.mean(client_losses[name], axis=0)
        print(f"{name:<22}{cells}   " + " ".join(f"{v:.3f}" for v in per_client))


if __name__ == "__main__":
    main()
