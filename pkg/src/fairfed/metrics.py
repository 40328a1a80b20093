"""Fairness/utility measurements, per-round records and their CSV/JSON renderings."""

from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import fairness
from .errors import UsageError
from .tensor import Batch, ModelSpec, loss, predict

FIXED_COLUMNS = (
    "round",
    "gap_max",
    "gap_min",
    "gap_variance",
    "balanced_accuracy",
    "objective",
    "gamma_estimate",
)
PER_CLIENT_COLUMNS = ("loss", "gap", "weight")


def balanced_accuracy(predictions, labels, num_classes: int, sample_weight=None) -> float:
    """Mean per-class recall over the classes present in ``labels``.

    ``sample_weight`` lets callers pool several clients' test sets while giving
    each client the same total mass.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise UsageError("balanced_accuracy needs at least one sample")
    if predictions.shape != labels.shape:
        raise UsageError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    w = np.ones(labels.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    hit = (predictions == labels) * w
    mass = np.bincount(labels, weights=w, minlength=num_classes)
    correct = np.bincount(labels, weights=hit, minlength=num_classes)
    present = mass > 0
    return float(np.mean(correct[present] / mass[present]))


@dataclass(frozen=True)
class ClientEvaluation:
    loss: float
    gap: float
    test_predictions: np.ndarray
    test_labels: np.ndarray


def evaluate_client(spec: ModelSpec, params, gap_batch: Batch, test_batch: Batch, optimal_loss: float) -> ClientEvaluation:
    value = loss(spec, params, gap_batch)
    return ClientEvaluation(value, value - optimal_loss, predict(spec, params, test_batch), test_batch.labels)


def pooled_balanced_accuracy(evaluations: Sequence[ClientEvaluation], num_classes: int) -> float:
    """Pool every client's test set, each client weighted uniformly, then average per-class recall."""
    preds = np.concatenate([e.test_predictions for e in evaluations])
    labels = np.concatenate([e.test_labels for e in evaluations])
    weights = np.concatenate([np.full(e.test_labels.shape[0], 1.0 / e.test_labels.shape[0]) for e in evaluations])
    return balanced_accuracy(preds, labels, num_classes, weights)


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    losses: tuple[float, ...]
    gaps: tuple[float, ...]
    weights: tuple[float, ...]
    gap_max: float
    gap_min: float
    gap_variance: float
    balanced_accuracy: float
    objective: float
    gamma_estimate: float

    @property
    def num_clients(self) -> int:
        return len(self.gaps)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("losses", "gaps", "weights"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsRecord":
        d = dict(d)
        for key in ("losses", "gaps", "weights"):
            d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


def summarize_round(
    state,
    evaluations: Sequence[ClientEvaluation],
    num_classes: int,
    lam: float = 0.0,
    gamma_estimate: float = 0.0,
) -> MetricsRecord:
    """Build the record for one round from ``state`` (a RoundState) and per-client evaluations."""
    k = len(state.weights)
    if len(evaluations) != k or any(e is None for e in evaluations):
        raise RuntimeError(f"round {state.round}: expected evaluations for {k} clients, got {len(evaluations)}")
    losses = np.array([e.loss for e in evaluations])
    gaps = np.array([e.gap for e in evaluations])
    return MetricsRecord(
        round=int(state.round),
        losses=tuple(losses.tolist()),
        gaps=tuple(gaps.tolist()),
        weights=tuple(np.asarray(state.weights, dtype=np.float64).tolist()),
        gap_max=float(gaps.max()),
        gap_min=float(gaps.min()),
        gap_variance=fairness.gap_variance(gaps),
        balanced_accuracy=pooled_balanced_accuracy(evaluations, num_classes),
        objective=fairness.objective(losses, gaps, lam),
        gamma_estimate=float(gamma_estimate),
    )


# --------------------------------------------------------------------------- emitters


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def csv_header(num_clients: int) -> list[str]:
    per_client = [f"{name}_{k}" for name in PER_CLIENT_COLUMNS for k in range(num_clients)]
    return list(FIXED_COLUMNS) + per_client


def emit_csv(records: Sequence[MetricsRecord]) -> bytes:
    if not records:
        raise UsageError("cannot emit an empty trace")
    k = records[0].num_clients
    out = io.StringIO()
    out.write(",".join(csv_header(k)) + "\n")
    for r in records:
        row = [getattr(r, c) for c in FIXED_COLUMNS]
        row += list(r.losses) + list(r.gaps) + list(r.weights)
        out.write(",".join(_fmt(v) for v in row) + "\n")
    return out.getvalue().encode("utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def dumps(payload) -> bytes:
    return (json.dumps(_jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def emit_json(records: Sequence[MetricsRecord], config: Mapping | None = None, extra: Mapping | None = None) -> bytes:
    if not records:
        raise UsageError("cannot emit an empty trace")
    payload = {"config": dict(config or {}), "records": [r.to_dict() for r in records]}
    if extra:
        payload.update(extra)
    return dumps(payload)


def parse_json(blob: bytes | str) -> tuple[dict, list[MetricsRecord]]:
    payload = json.loads(blob)
    return payload["config"], [MetricsRecord.from_dict(r) for r in payload["records"]]


# --------------------------------------------------------------------------- multi-seed


SUMMARY_METRICS = ("gap_max", "gap_min", "balanced_accuracy", "gap_variance", "objective")


def mean_std(values: Iterable[float]) -> tuple[float, float]:
    """Population mean and std; ``math.fsum`` makes the result independent of input order."""
    v = [float(x) for x in values]
    if not v:
        raise UsageError("mean_std of an empty sequence")
    m = math.fsum(v) / len(v)
    return m, math.sqrt(math.fsum((x - m) ** 2 for x in v) / len(v))


def aggregate_final(records: Sequence[MetricsRecord], metrics: Sequence[str] = SUMMARY_METRICS) -> dict:
    """Table-shaped summary of the final records of several seeds: one row per metric."""
    out = {}
    for name in metrics:
        m, s = mean_std(getattr(r, name) for r in records)
        out[name] = {"mean": m, "std": s, "n": len(records)}
    return out
