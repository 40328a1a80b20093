"""Simulation drivers: EAGLE, FedAvg, q-FFL and AFL over in-process clients.

Every client participates in every round. Randomness is keyed by
``(seed, stream, round, client)`` and aggregation folds clients in index
order, so traces do not depend on how many workers run the client updates.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import fairness
from .datasets import ClientDataset, rng_for
from .errors import ConfigurationError, DegenerateStateError, TrainingError
from .fairness import GammaEstimate, Normalization
from .metrics import MetricsRecord, evaluate_client, summarize_round
from .tensor import ModelSpec, average_params, init_params, loss, loss_and_grad, sgd_step

log = logging.getLogger(__name__)

STREAM_INIT = 21
STREAM_MINIBATCH = 22


class Algorithm(str, enum.Enum):
    FEDAVG = "fedavg"
    EAGLE = "eagle"
    QFFL = "qffl"
    AFL = "afl"


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"


@dataclass(frozen=True)
class LocalOptimumConfig:
    """Full-batch GD used to approximate each client's optimal local loss."""

    lr: float = 0.1
    max_epochs: int = 1000
    window: int = 20
    tol: float = 1e-4


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: Algorithm
    model: ModelSpec
    rounds: int = 300
    local_epochs: int = 1
    eta: float = 0.1
    batch_size: int | None = None  # None -> full batch
    lam: float | None = None
    q: float | None = None
    afl_step: float | None = None
    normalization: Normalization = Normalization.L2_UNIT
    seed: int = 0
    gap_split: Split = Split.VALIDATION
    local_opt: LocalOptimumConfig = field(default_factory=LocalOptimumConfig)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "gap_split", Split(self.gap_split))

    def validate(self) -> "ExperimentConfig":
        if self.rounds < 0:
            raise ConfigurationError(f"rounds must be >= 0, got {self.rounds}")
        if self.local_epochs < 1:
            raise ConfigurationError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be positive, got {self.eta}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        required = {Algorithm.EAGLE: "lam", Algorithm.QFFL: "q", Algorithm.AFL: "afl_step"}
        name = required.get(self.algorithm)
        if name is not None:
            value = getattr(self, name)
            if value is None:
                raise ConfigurationError(f"algorithm {self.algorithm.value} requires '{name}'")
            if value < 0:
                raise ConfigurationError(f"'{name}' must be nonnegative, got {value}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RoundState:
    round: int
    params: np.ndarray
    gaps: np.ndarray
    weights: np.ndarray
    raw_weights: np.ndarray | None = None
    mixture: np.ndarray | None = None


@dataclass
class TrainingTrace:
    config: ExperimentConfig
    records: list[MetricsRecord]
    initial_params: np.ndarray
    final_params: np.ndarray
    gamma: GammaEstimate
    optimal_losses: np.ndarray
    raw_weight_history: list[np.ndarray] = field(default_factory=list)
    mixture_history: list[np.ndarray] = field(default_factory=list)


@dataclass(frozen=True)
class ClientResult:
    params: np.ndarray
    gap: float
    train_loss: float


# --------------------------------------------------------------------------- local optima


def initial_params(config: ExperimentConfig) -> np.ndarray:
    return init_params(config.model, rng_for(config.seed, STREAM_INIT))


def local_optimum(
    spec: ModelSpec, data: ClientDataset, cfg: LocalOptimumConfig, init: np.ndarray
) -> tuple[np.ndarray, int]:
    """Full-batch GD on the train split; returns (params, epochs run).

    Stops at ``cfg.max_epochs`` or once the relative improvement of the training
    loss over the last ``cfg.window`` epochs drops below ``cfg.tol``.
    """
    theta = init
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        _, g = loss_and_grad(spec, theta, data.train)
        theta = sgd_step(theta, g, cfg.lr)
        current = loss(spec, theta, data.train)
        if not np.isfinite(current) or not np.all(np.isfinite(theta)):
            raise TrainingError(f"client {data.client_id}: local training diverged at epoch {epoch}")
        history.append(current)
        if epoch > cfg.window:
            past = history[-1 - cfg.window]
            if (past - current) / max(abs(past), 1e-12) < cfg.tol:
                return theta, epoch
    return theta, cfg.max_epochs


def estimate_local_optima(
    datasets: Sequence[ClientDataset],
    spec: ModelSpec,
    cfg: LocalOptimumConfig = LocalOptimumConfig(),
    split: Split | str = Split.VALIDATION,
    init: np.ndarray | None = None,
    workers: int = 1,
) -> np.ndarray:
    """L*_k: loss on ``split`` of a model trained on client k's train split alone."""
    split = Split(split)
    if init is None:
        init = np.zeros(spec.dim)

    def one(data: ClientDataset) -> float:
        theta, epochs = local_optimum(spec, data, cfg, init)
        value = loss(spec, theta, data.split(split.value))
        log.debug("client %d: L* = %.6f after %d epochs", data.client_id, value, epochs)
        return value

    return np.array(_map(one, datasets, workers))


# --------------------------------------------------------------------------- client side


def client_update(
    k: int,
    params: np.ndarray,
    weight: float,
    data: ClientDataset,
    optimal_loss: float,
    config: ExperimentConfig,
    round_index: int = 0,
) -> ClientResult:
    """Measure the gap on the arrival model, then run ``local_epochs`` of SGD scaled by ``weight``."""
    if not np.isfinite(weight):
        raise TrainingError(f"client {k}: non-finite weight {weight} in round {round_index}")
    spec = config.model
    gap = loss(spec, params, data.split(config.gap_split.value)) - optimal_loss
    train = data.train
    n = len(train)
    full = config.batch_size is None or config.batch_size >= n
    rng = None if full else rng_for(config.seed, STREAM_MINIBATCH, round_index, k)

    theta = params
    train_loss = None
    for epoch in range(config.local_epochs):
        if full:
            batches = [train]
        else:
            order = rng.permutation(n)
            batches = [train.take(order[i : i + config.batch_size]) for i in range(0, n, config.batch_size)]
        for batch in batches:
            value, g = loss_and_grad(spec, theta, batch)
            if train_loss is None and full:
                train_loss = value
            theta = sgd_step(theta, g, config.eta, weight)
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"client {k}: parameters became non-finite in round {round_index}, epoch {epoch}")
    if train_loss is None:
        train_loss = loss(spec, params, train)
    return ClientResult(theta, float(gap), float(train_loss))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------- server side


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.shape[0] + 1)
    rho = np.flatnonzero(u - css / ks > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def qffl_weights(losses, q: float) -> np.ndarray:
    """Client weights proportional to L_k^q, rescaled to mean 1."""
    p = np.power(np.asarray(losses, dtype=np.float64), q)
    mean = p.mean()
    if mean == 0.0:
        raise DegenerateStateError("every client loss is zero; q-FFL weights undefined", {"losses": list(losses)})
    return p / mean


class _Federation:
    """Round mechanics shared by all drivers."""

    def __init__(self, config, datasets, optimal_losses, on_round):
        self.config = config.validate()
        self.datasets = list(datasets)
        self.k = len(self.datasets)
        if self.k < 2:
            raise ConfigurationError(f"a federation needs at least 2 clients, got {self.k}")
        self.theta0 = initial_params(config)
        if optimal_losses is None:
            optimal_losses = estimate_local_optima(
                self.datasets, config.model, config.local_opt, config.gap_split, self.theta0, config.workers
            )
        self.optimal = np.asarray(optimal_losses, dtype=np.float64)
        if self.optimal.shape != (self.k,):
            raise ConfigurationError(f"{self.optimal.shape[0]} optimal losses for {self.k} clients")
        self.on_round = on_round
        self.gamma = GammaEstimate()
        self.records: list[MetricsRecord] = []
        self.raw_history: list[np.ndarray] = []
        self.mixture_history: list[np.ndarray] = []
        self.lam = config.lam if config.algorithm is Algorithm.EAGLE else 0.0

    def clients(self, theta, weights, t) -> list[ClientResult]:
        cfg = self.config
        return _map(
            lambda k: client_update(k, theta, float(weights[k]), self.datasets[k], self.optimal[k], cfg, t),
            range(self.k),
            cfg.workers,
        )

    def train_losses(self, theta) -> np.ndarray:
        return np.array(_map(lambda d: loss(self.config.model, theta, d.train), self.datasets, self.config.workers))

    def close_round(self, t, results, weights, raw=None, mixture=None) -> np.ndarray:
        theta = average_params([r.params for r in results])
        gaps = np.array([r.gap for r in results])
        self.gamma = fairness.gamma_update(self.gamma, gaps)
        spec = self.config.model
        split = self.config.gap_split.value
        evals = _map(
            lambda k: evaluate_client(
                spec, theta, self.datasets[k].split(split), self.datasets[k].test, self.optimal[k]
            ),
            range(self.k),
            self.config.workers,
        )
        self.gamma = fairness.gamma_update(self.gamma, [e.gap for e in evals])
        state = RoundState(t + 1, theta, gaps, np.asarray(weights, dtype=np.float64), raw, mixture)
        self.records.append(summarize_round(state, evals, spec.num_classes, self.lam, self.gamma.value))
        if self.on_round is not None:
            self.on_round(state)
        return theta

    def trace(self, theta) -> TrainingTrace:
        return TrainingTrace(
            self.config, self.records, self.theta0, theta, self.gamma, self.optimal,
            self.raw_history, self.mixture_history,
        )


OnRound = Callable[[RoundState], None] | None


def run_fedavg(config, datasets, optimal_losses=None, on_round: OnRound = None) -> TrainingTrace:
    fed = _Federation(config, datasets, optimal_losses, on_round)
    theta = fed.theta0
    weights = np.ones(fed.k)
    for t in range(config.rounds):
        theta = fed.close_round(t, fed.clients(theta, weights, t), weights)
    return fed.trace(theta)


def run_eagle(config, datasets, optimal_losses=None, on_round: OnRound = None) -> TrainingTrace:
    fed = _Federation(config, datasets, optimal_losses, on_round)
    theta = fed.theta0
    weights = np.ones(fed.k)
    for t in range(config.rounds):
        results = fed.clients(theta, weights, t)
        raw = fairness.eagle_weights([r.gap for r in results], config.lam)
        fed.raw_history.append(raw.weights)
        theta = fed.close_round(t, results, weights, raw=raw.weights)
        try:
            weights = fairness.normalize_weights(raw, config.normalization).weights
        except DegenerateStateError as exc:
            exc.state.update(round=t, gaps=[r.gap for r in results], params_norm=float(np.linalg.norm(theta)))
            raise
    return fed.trace(theta)


def run_qffl(config, datasets, optimal_losses=None, on_round: OnRound = None) -> TrainingTrace:
    fed = _Federation(config, datasets, optimal_losses, on_round)
    theta = fed.theta0
    for t in range(config.rounds):
        weights = qffl_weights(fed.train_losses(theta), config.q)
        theta = fed.close_round(t, fed.clients(theta, weights, t), weights)
    return fed.trace(theta)


def run_afl(config, datasets, optimal_losses=None, on_round: OnRound = None) -> TrainingTrace:
    fed = _Federation(config, datasets, optimal_losses, on_round)
    theta = fed.theta0
    mixture = np.full(fed.k, 1.0 / fed.k)
    for t in range(config.rounds):
        weights = fed.k * mixture
        results = fed.clients(theta, weights, t)
        fed.mixture_history.append(mixture)
        theta = fed.close_round(t, results, weights, mixture=mixture)
        mixture = project_simplex(mixture + config.afl_step * np.array([r.train_loss for r in results]))
    return fed.trace(theta)


DRIVERS = {
    Algorithm.FEDAVG: run_fedavg,
    Algorithm.EAGLE: run_eagle,
    Algorithm.QFFL: run_qffl,
    Algorithm.AFL: run_afl,
}


def run(config: ExperimentConfig, datasets, optimal_losses=None, on_round: OnRound = None) -> TrainingTrace:
    return DRIVERS[config.algorithm](config, datasets, optimal_losses, on_round)


def with_algorithm(config: ExperimentConfig, algorithm, **changes) -> ExperimentConfig:
    return replace(config, algorithm=Algorithm(algorithm), **changes)
