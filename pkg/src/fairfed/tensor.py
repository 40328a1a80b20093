"""Dense kernels for the two model families: forward pass, cross-entropy, gradients, SGD.

Parameters live in a single flat float64 vector. Layouts:

* ``LINEAR``: ``W`` (num_classes x input_dim, row-major) then ``b`` (num_classes).
* ``MLP``: ``W1`` (hidden x input), ``b1`` (hidden), ``W2`` (classes x hidden), ``b2`` (classes),
  with a ReLU between the two affine maps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, UsageError


class ModelFamily(str, enum.Enum):
    LINEAR = "linear"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    family: ModelFamily
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.family is ModelFamily.MLP and self.hidden_dim < 1:
            raise ConfigurationError("MLP models need a positive hidden_dim")

    @property
    def dim(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.family is ModelFamily.LINEAR:
            return (d + 1) * c
        return (d + 1) * h + (h + 1) * c


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ConfigurationError(
                f"batch shapes do not line up: features {x.shape}, labels {y.shape}"
            )
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.features[idx], self.labels[idx])


def _check(spec: ModelSpec, params: np.ndarray, batch: Batch) -> None:
    if params.ndim != 1 or params.shape[0] != spec.dim:
        raise ConfigurationError(
            f"parameter vector has shape {params.shape}, model expects ({spec.dim},)"
        )
    if len(batch) < 1:
        raise ConfigurationError("empty batch")
    if batch.features.shape[1] != spec.input_dim:
        raise ConfigurationError(
            f"batch has {batch.features.shape[1]} features, model expects {spec.input_dim}"
        )
    lo, hi = batch.labels.min(), batch.labels.max()
    if lo < 0 or hi >= spec.num_classes:
        raise ConfigurationError(f"labels span [{lo}, {hi}], outside [0, {spec.num_classes})")


def unpack(spec: ModelSpec, params: np.ndarray) -> tuple[np.ndarray, ...]:
    """Views into ``params`` shaped as the model's weight matrices and biases."""
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if spec.family is ModelFamily.LINEAR:
        return params[: c * d].reshape(c, d), params[c * d :]
    o = 0
    w1 = params[o : o + h * d].reshape(h, d)
    o += h * d
    b1 = params[o : o + h]
    o += h
    w2 = params[o : o + c * h].reshape(c, h)
    o += c * h
    return w1, b1, w2, params[o:]


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    """Small Gaussian weights, zero biases."""
    params = np.zeros(spec.dim)
    for block in unpack(spec, params)[::2]:
        block[...] = scale * rng.standard_normal(block.shape)
    return params


def forward_logits(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    _check(spec, params, batch)
    x = batch.features
    if spec.family is ModelFamily.LINEAR:
        w, b = unpack(spec, params)
        return x @ w.T + b
    w1, b1, w2, b2 = unpack(spec, params)
    return np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy; cheaper than :func:`loss_and_grad` when no gradient is needed."""
    logp = _log_softmax(forward_logits(spec, params, batch))
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def predict(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    return forward_logits(spec, params, batch).argmax(axis=1)


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient w.r.t. ``params``."""
    _check(spec, params, batch)
    x, y = batch.features, batch.labels
    n = len(batch)
    rows = np.arange(n)

    if spec.family is ModelFamily.LINEAR:
        w, b = unpack(spec, params)
        logits = x @ w.T + b
    else:
        w1, b1, w2, b2 = unpack(spec, params)
        pre = x @ w1.T + b1
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ w2.T + b2

    logp = _log_softmax(logits)
    value = float(-logp[rows, y].mean())
    # d(mean CE)/d(logits) = (softmax - onehot) / n
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    dlogits /= n

    grad = np.empty_like(params)
    if spec.family is ModelFamily.LINEAR:
        gw, gb = unpack(spec, grad)
        gw[...] = dlogits.T @ x
        gb[...] = dlogits.sum(axis=0)
    else:
        gw1, gb1, gw2, gb2 = unpack(spec, grad)
        gw2[...] = dlogits.T @ hidden
        gb2[...] = dlogits.sum(axis=0)
        dpre = (dlogits @ w2) * (pre > 0.0)
        gw1[...] = dpre.T @ x
        gb1[...] = dpre.sum(axis=0)
    return value, grad


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float, scale: float = 1.0) -> np.ndarray:
    """``params - lr * scale * grad``. ``scale`` may be negative (gradient ascent)."""
    if params.shape != grad.shape:
        raise ConfigurationError(f"dimension mismatch: {params.shape} vs {grad.shape}")
    return params - (lr * scale) * grad


def average_params(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise mean, always folded in list order so results are reproducible."""
    if len(vectors) == 0:
        raise UsageError("cannot average an empty list of parameter vectors")
    shape = vectors[0].shape
    total = np.zeros(shape)
    for v in vectors:
        if v.shape != shape:
            raise ConfigurationError(f"dimension mismatch: {v.shape} vs {shape}")
        total += v
    return total / len(vectors)
