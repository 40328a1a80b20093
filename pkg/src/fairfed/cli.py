"""``fairfed`` command: local-optimum phase, federated training, per-seed traces and a summary."""

from __future__ import annotations

import argparse
import logging
import sys
from functools import lru_cache
from pathlib import Path

from . import datasets as ds
from . import metrics
from .config import RunManifest, parse_config
from .errors import FairFedError
from .federation import estimate_local_optima, initial_params, run

log = logging.getLogger("fairfed")

FLAGS = (
    ("--algorithm", "algorithm"),
    ("--lambda", "lambda"),
    ("--q", "q"),
    ("--afl-step", "afl_step"),
    ("--alpha", "alpha"),
    ("--rounds", "rounds"),
    ("--local-epochs", "local_epochs"),
    ("--eta", "eta"),
    ("--batch-size", "batch_size"),
    ("--seeds", "seeds"),
    ("--out", "out"),
    ("--dataset", "dataset"),
    ("--emnist-images", "emnist_images"),
    ("--emnist-labels", "emnist_labels"),
    ("--emnist-subset", "emnist_subset"),
    ("--num-clients", "num_clients"),
    ("--model", "model"),
    ("--gap-split", "gap_split"),
    ("--norm", "norm"),
    ("--workers", "workers"),
)


@lru_cache(maxsize=4)
def _load_emnist(images: str, labels: str):
    return ds.load_idx(images, labels)


def build_datasets(manifest: RunManifest, seed: int):
    """Client datasets and model spec for one seed."""
    if manifest["dataset"] == "synthetic":
        clients = ds.gen_synthetic(ds.SyntheticSpec(), seed)
        return clients, manifest.model_spec(2, 2)
    features, labels = _load_emnist(manifest["emnist_images"], manifest["emnist_labels"])
    num_classes = int(labels.max()) + 1
    x, y = ds.subsample(features, labels, manifest["emnist_subset"], seed)
    clients = ds.partition_clients(x, y, manifest["num_clients"], manifest["alpha"], seed)
    return clients, manifest.model_spec(x.shape[1], num_classes)


def run_seed(manifest: RunManifest, seed: int):
    clients, spec = build_datasets(manifest, seed)
    config = manifest.experiment_config(seed, spec)
    lstar = estimate_local_optima(
        clients, spec, config.local_opt, config.gap_split, initial_params(config), config.workers
    )
    manifest.optimal_losses[seed] = lstar.tolist()
    log.info("seed %d: L* = %s", seed, ", ".join(f"{v:.4f}" for v in lstar))
    return config, run(config, clients, lstar)


def _write(path: Path, blob: bytes) -> None:
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise FairFedError(f"{path}: cannot write ({exc})") from exc


def run_experiment(manifest: RunManifest) -> int:
    """Run every seed of ``manifest``; returns the process exit status."""
    out = manifest.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("%s: cannot create output directory (%s)", out, exc)
        return 1
    stem = f"{manifest.algorithm.value}_{manifest.param_tag()}"
    if manifest["write_manifest"]:
        _write(out / f"{stem}_manifest.cfg", manifest.to_text().encode("utf-8"))

    finals, failures, status = {}, {}, 0
    for seed in manifest.seeds:
        try:
            config, trace = run_seed(manifest, seed)
            if not trace.records:
                raise FairFedError("zero rounds requested; nothing to emit")
            extra = {
                "optimal_losses": trace.optimal_losses,
                "gamma_estimate": trace.gamma.value,
                "manifest": manifest.values,
            }
            _write(out / f"{stem}_{seed}.csv", metrics.emit_csv(trace.records))
            _write(out / f"{stem}_{seed}.json", metrics.emit_json(trace.records, config.to_dict(), extra))
            finals[seed] = trace.records[-1]
            log.info("seed %d: final gap variance %.5f, balanced accuracy %.4f",
                     seed, finals[seed].gap_variance, finals[seed].balanced_accuracy)
        except FairFedError as exc:
            log.error("seed %d failed: %s", seed, exc)
            failures[seed] = str(exc)
            status = status or exc.exit_code

    summary = {
        "manifest": manifest.values,
        "seeds": sorted(finals),
        "failed": failures,
        "optimal_losses": manifest.optimal_losses,
        "summary": metrics.aggregate_final([finals[s] for s in sorted(finals)]) if finals else {},
    }
    _write(out / f"{stem}_summary.json", metrics.dumps(summary))
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairfed", description=__doc__)
    p.add_argument("--config", type=Path, help="flat key = value configuration file")
    for flag, key in FLAGS:
        p.add_argument(flag, dest=key, default=None, metavar=key.upper())
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {key: getattr(args, key) for _, key in FLAGS}
    try:
        text = args.config.read_text() if args.config else ""
        manifest = parse_config(text, overrides)
    except OSError as exc:
        print(f"fairfed: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1
    except FairFedError as exc:
        print(f"fairfed: configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    return run_experiment(manifest)


if __name__ == "__main__":
    sys.exit(main())
