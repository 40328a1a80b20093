"""Loss-gap parity math: gaps, client weights, the variance penalty and its gradient."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateStateError


class Normalization(str, enum.Enum):
    NONE = "none"
    L2_UNIT = "l2unit"
    L2_SQRTK = "l2sqrtk"


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    lam: float
    normalization: Normalization = Normalization.NONE


@dataclass(frozen=True)
class GammaEstimate:
    """Running lower bound on the worst pairwise gap spread over visited models."""

    value: float = 0.0
    num_observations: int = 0


def _gaps(gaps) -> np.ndarray:
    g = np.asarray(gaps, dtype=np.float64)
    if g.ndim != 1 or g.shape[0] < 2:
        raise ConfigurationError(f"need gaps for at least 2 clients, got shape {g.shape}")
    return g


def loss_gaps(losses, optimal_losses) -> np.ndarray:
    """r_k = L_k - L*_k. Negative values are legitimate."""
    return np.asarray(losses, dtype=np.float64) - np.asarray(optimal_losses, dtype=np.float64)


def eagle_weights(gaps, lam: float) -> WeightVector:
    """w_k = 1 + 4*lam/(K-1) * sum_{k' != k} (r_k - r_k'), evaluated in O(K)."""
    r = _gaps(gaps)
    k = r.shape[0]
    w = 1.0 + (4.0 * lam / (k - 1)) * (k * r - r.sum())
    return WeightVector(w, lam)


def normalize_weights(w: WeightVector, mode: Normalization | str = Normalization.L2_UNIT) -> WeightVector:
    mode = Normalization(mode)
    if mode is Normalization.NONE:
        return WeightVector(w.weights, w.lam, mode)
    norm = np.linalg.norm(w.weights)
    if norm == 0.0:
        raise DegenerateStateError(
            "cannot normalize an all-zero weight vector",
            {"weights": w.weights.tolist(), "lambda": w.lam},
        )
    scaled = w.weights / norm
    if mode is Normalization.L2_SQRTK:
        scaled = np.sqrt(w.weights.shape[0]) * scaled
    return WeightVector(scaled, w.lam, mode)


def _sum_sq_diffs(r: np.ndarray) -> float:
    # pairwise form: exactly zero for equal gaps, unlike the mean-deviation form
    d = r[:, None] - r[None, :]
    return float(np.sum(d * d))


def pairwise_penalty(gaps, lam: float) -> float:
    """lam / (K(K-1)) * sum over ordered pairs of (r_k - r_k')^2."""
    r = _gaps(gaps)
    k = r.shape[0]
    return lam * _sum_sq_diffs(r) / (k * (k - 1))


def gap_variance(gaps) -> float:
    """Sample variance (denominator K-1)."""
    r = _gaps(gaps)
    k = r.shape[0]
    return _sum_sq_diffs(r) / (2 * k * (k - 1))


def objective(losses, gaps, lam: float) -> float:
    losses = np.asarray(losses, dtype=np.float64)
    r = _gaps(gaps)
    if losses.shape != r.shape:
        raise ConfigurationError(f"{losses.shape[0]} losses but {r.shape[0]} gaps")
    return float(losses.mean()) + pairwise_penalty(r, lam)


def objective_grad(grads: Sequence[np.ndarray], gaps, lam: float) -> np.ndarray:
    """Exact gradient of :func:`objective`: the weighted mean of client gradients."""
    w = eagle_weights(gaps, lam).weights
    if len(grads) != w.shape[0]:
        raise ConfigurationError(f"{len(grads)} gradients but {w.shape[0]} gaps")
    out = np.zeros_like(np.asarray(grads[0], dtype=np.float64))
    for wk, g in zip(w, grads):
        if g.shape != out.shape:
            raise ConfigurationError(f"dimension mismatch: {g.shape} vs {out.shape}")
        out += wk * g
    return out / len(grads)


def gamma_update(est: GammaEstimate, gaps) -> GammaEstimate:
    r = _gaps(gaps)
    spread = float(r.max() - r.min())
    return GammaEstimate(max(est.value, spread), est.num_observations + 1)
