"""Client data: the three-client Gaussian task, IDX ingestion, Dirichlet splits, per-client splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError
from .tensor import Batch

DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Sub-stream tags; every random draw is keyed by (seed, tag, ...) so that
# results never depend on call order.
STREAM_SYNTHETIC = 11
STREAM_SPLIT = 12
STREAM_DIRICHLET = 13
STREAM_SUBSET = 14


def rng_for(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass(frozen=True)
class ClientDataset:
    client_id: int
    train: Batch
    validation: Batch
    test: Batch

    def split(self, name: str) -> Batch:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]


# --------------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    """Per-client class-conditional Gaussians; ``means[k]`` is the positive-class mean of client k."""

    means: tuple[tuple[float, float], ...] = ((2.0, 2.0), (0.5, 0.5), (0.1, 0.1))
    rotation_degrees: tuple[float, ...] = (0.0, 0.0, 45.0)
    samples_per_client: int = 100
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS

    def __post_init__(self):
        if len(self.means) != len(self.rotation_degrees):
            raise ConfigurationError("one rotation per client is required")
        if self.samples_per_client < 2:
            raise ConfigurationError("need at least one sample per class")


def rotate(points: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate 2-d row vectors counter-clockwise about the origin."""
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return points @ np.array([[c, s], [-s, c]])


def synthetic_raw(spec: SyntheticSpec, client: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = rng_for(seed, STREAM_SYNTHETIC, client)
    n = spec.samples_per_client
    n_pos = n // 2
    mean = np.asarray(spec.means[client], dtype=np.float64)
    # label +1 -> class 1, label -1 -> class 0
    y = np.concatenate([np.ones(n_pos, dtype=np.int64), np.zeros(n - n_pos, dtype=np.int64)])
    x = rng.standard_normal((n, 2)) + np.where(y[:, None] == 1, mean, -mean)
    return rotate(x, spec.rotation_degrees[client]), y


def gen_synthetic(spec: SyntheticSpec | None = None, seed: int = 0) -> list[ClientDataset]:
    spec = spec or SyntheticSpec()
    clients = []
    for k in range(len(spec.means)):
        x, y = synthetic_raw(spec, k, seed)
        clients.append(split_train_val_test(x, y, spec.fractions, seed, client_id=k))
    return clients


# --------------------------------------------------------------------------- IDX files


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read ({exc})") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IngestionError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _parse_idx(raw: bytes, path, expected_magic: int, ndim: int) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IngestionError(f"{path}: file holds {len(raw)} bytes, magic number needs 4 (offset 0)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IngestionError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    if len(raw) < header:
        raise IngestionError(f"{path}: header truncated at offset {len(raw)}, needs {header} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + size:
        raise IngestionError(
            f"{path}: data truncated at offset {len(raw)}, expected {header + size} bytes"
        )
    if len(raw) > header + size:
        raise IngestionError(f"{path}: {len(raw) - header - size} trailing bytes after offset {header + size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair (plain or gzip). Pixels are scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), images_path, IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return features, labels.astype(np.int64)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path, compress: bool = False) -> None:
    """Write uint8 ``images`` (n x rows x cols) and ``labels`` (n) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes()
    lab = struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    if compress:
        img, lab = gzip.compress(img, mtime=0), gzip.compress(lab, mtime=0)
    Path(images_path).write_bytes(img)
    Path(labels_path).write_bytes(lab)


# --------------------------------------------------------------------------- partitioning


@dataclass(frozen=True)
class DirichletPartition:
    alpha: float
    num_clients: int
    assignment: np.ndarray = field(repr=False)
    proportions: dict = field(default_factory=dict, repr=False)

    def indices(self, client: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == client)


def largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer counts proportional to ``weights`` that sum to ``total`` exactly."""
    weights = np.asarray(weights, dtype=np.float64)
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    # stable sort: ties go to the lower index
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def dirichlet_split(labels, num_clients: int, alpha: float, seed: int) -> DirichletPartition:
    """Allocate each class across clients by a Dirichlet(alpha) probability vector.

    Within a class, samples keep their original order and are handed out as
    contiguous blocks.
    """
    if num_clients < 2:
        raise ConfigurationError(f"dirichlet_split needs at least 2 clients, got {num_clients}")
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    labels = np.asarray(labels)
    rng = rng_for(seed, STREAM_DIRICHLET)
    assignment = np.full(labels.shape[0], -1, dtype=np.int64)
    proportions = {}
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        g = rng.gamma(alpha, 1.0, size=num_clients)
        if g.sum() == 0.0:
            # every draw underflowed (tiny alpha): the limit is a one-hot vector
            g[rng.integers(num_clients)] = 1.0
        p = g / g.sum()
        proportions[int(c)] = p
        counts = largest_remainder(idx.shape[0], p)
        assignment[idx] = np.repeat(np.arange(num_clients), counts)
    return DirichletPartition(alpha, num_clients, assignment, proportions)


def split_train_val_test(
    features,
    labels,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    client_id: int = 0,
) -> ClientDataset:
    """Shuffle one client's raw data and cut it into train / validation / test."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions <= 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be 3 positive numbers summing to 1, got {fractions}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if n < 3:
        raise ConfigurationError(f"client {client_id} has {n} samples; each split needs at least one")
    sizes = largest_remainder(n, fractions)
    for i in np.flatnonzero(sizes == 0):
        sizes[np.argmax(sizes)] -= 1
        sizes[i] = 1
    perm = rng_for(seed, STREAM_SPLIT, client_id).permutation(n)
    tr, va, te = np.split(perm, np.cumsum(sizes)[:2])
    take = lambda ix: Batch(features[ix], labels[ix])
    return ClientDataset(client_id, take(tr), take(va), take(te))


def partition_clients(
    features,
    labels,
    num_clients: int,
    alpha: float,
    seed: int,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> list[ClientDataset]:
    part = dirichlet_split(labels, num_clients, alpha, seed)
    return [
        split_train_val_test(features[ix], labels[ix], fractions, seed, client_id=k)
        for k, ix in ((k, part.indices(k)) for k in range(num_clients))
    ]


def subsample(features, labels, n: int | None, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform subset of ``n`` samples, kept in original order."""
    if n is None or n >= labels.shape[0]:
        return features, labels
    idx = np.sort(rng_for(seed, STREAM_SUBSET).choice(labels.shape[0], size=n, replace=False))
    return features[idx], labels[idx]
