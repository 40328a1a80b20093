"""Flat ``key = value`` run configuration and the resolved run manifest.

Grammar: one ``key = value`` per line; blank lines and ``#`` comments are
ignored; keys are the names in :data:`FIELDS`; lists are comma-separated.
Command-line flags override file values; unknown keys are rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import ConfigurationError
from .fairness import Normalization
from .federation import Algorithm, ExperimentConfig, LocalOptimumConfig, Split
from .tensor import ModelFamily, ModelSpec

DEFAULT_SEEDS = (0, 42, 100, 200)
LAMBDA_GRID = (0.1, 0.3, 0.5, 0.7, 1.0, 2.0, 3.0, 5.0)
Q_GRID = (0.001, 0.01, 0.1, 1.0, 2.0, 5.0, 10.0)


def _choice(*options: str) -> Callable[[str], str]:
    def conv(s: str) -> str:
        s = s.strip().lower()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s

    conv.__name__ = "one of " + "|".join(options)
    return conv


def _bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _int(s: str) -> int:
    return int(s.strip())


def _float(s: str) -> float:
    return float(s.strip())


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "full", "none", "all") else int(s)


def _seeds(s: str) -> tuple[int, ...]:
    seeds = tuple(int(p) for p in s.replace(" ", "").split(",") if p)
    if not seeds:
        raise ValueError("expected a comma-separated list of integers")
    return seeds


def _path(s: str) -> str:
    return s.strip()


# key -> (converter, default); a default of None means "unset"
FIELDS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "algorithm": (_choice(*(a.value for a in Algorithm)), None),
    "lambda": (_float, None),
    "q": (_float, None),
    "afl_step": (_float, None),
    "dataset": (_choice("synthetic", "emnist"), "synthetic"),
    "emnist_images": (_path, None),
    "emnist_labels": (_path, None),
    "emnist_subset": (_opt_int, None),
    "alpha": (_float, 0.1),
    "num_clients": (_int, 10),
    "model": (_choice(*(f.value for f in ModelFamily)), "linear"),
    "hidden_dim": (_int, 64),
    "rounds": (_int, 300),
    "local_epochs": (_int, 1),
    "eta": (_float, 0.1),
    "batch_size": (_opt_int, None),
    "norm": (_choice(*(n.value for n in Normalization)), Normalization.L2_UNIT.value),
    "gap_split": (_choice(*(s.value for s in Split)), Split.VALIDATION.value),
    "seeds": (_seeds, DEFAULT_SEEDS),
    "out": (_path, None),
    "lstar_lr": (_float, 0.1),
    "lstar_max_epochs": (_int, 1000),
    "lstar_window": (_int, 20),
    "lstar_tol": (_float, 1e-4),
    "workers": (_int, 1),
    "write_manifest": (_bool, True),
}


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key in raw:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key '{key}'")
        raw[key] = value
    return raw


@dataclass
class RunManifest:
    """Every resolved setting of a run; rendering it back to text reproduces the run."""

    values: dict[str, Any]
    optimal_losses: dict[int, list[float]] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.values["seeds"])

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out"])

    @property
    def algorithm(self) -> Algorithm:
        return Algorithm(self.values["algorithm"])

    def param_tag(self) -> str:
        alg = self.algorithm
        if alg is Algorithm.EAGLE:
            return f"lambda{self['lambda']:g}"
        if alg is Algorithm.QFFL:
            return f"q{self['q']:g}"
        if alg is Algorithm.AFL:
            return f"step{self['afl_step']:g}"
        return "base"

    def to_text(self) -> str:
        return "".join(f"{k} = {_render(self.values[k])}\n" for k in sorted(self.values))

    def experiment_config(self, seed: int, model: ModelSpec) -> ExperimentConfig:
        v = self.values
        return ExperimentConfig(
            algorithm=Algorithm(v["algorithm"]),
            model=model,
            rounds=v["rounds"],
            local_epochs=v["local_epochs"],
            eta=v["eta"],
            batch_size=v["batch_size"],
            lam=v["lambda"],
            q=v["q"],
            afl_step=v["afl_step"],
            normalization=Normalization(v["norm"]),
            seed=seed,
            gap_split=Split(v["gap_split"]),
            local_opt=LocalOptimumConfig(v["lstar_lr"], v["lstar_max_epochs"], v["lstar_window"], v["lstar_tol"]),
            workers=v["workers"],
        ).validate()

    def model_spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        family = ModelFamily(self.values["model"])
        hidden = self.values["hidden_dim"] if family is ModelFamily.MLP else 0
        return ModelSpec(family, input_dim, num_classes, hidden)


def parse_config(text: str | bytes = "", overrides: Mapping[str, str] | None = None, env=None) -> RunManifest:
    """Resolve file contents plus flag overrides into a validated :class:`RunManifest`."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    env = os.environ if env is None else env
    raw = parse_text(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key.replace("-", "_")] = str(value)

    unknown = sorted(set(raw) - set(FIELDS))
    if unknown:
        raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")

    values: dict[str, Any] = {}
    for key, (conv, default) in FIELDS.items():
        if key in raw and raw[key] != "":
            try:
                values[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigurationError(f"{key}: invalid value {raw[key]!r} ({exc})") from None
        else:
            values[key] = default

    if values["out"] is None:
        values["out"] = env.get("FAIRFED_OUT")
    _check(values)
    return RunManifest(values)


def _check(v: dict) -> None:
    if v["algorithm"] is None:
        raise ConfigurationError("missing required key 'algorithm'")
    need = {"eagle": "lambda", "qffl": "q", "afl": "afl_step"}.get(v["algorithm"])
    if need and v[need] is None:
        raise ConfigurationError(f"missing required key '{need}' for algorithm {v['algorithm']}")
    for key in ("lambda", "q", "afl_step"):
        if v[key] is not None and v[key] < 0:
            raise ConfigurationError(f"{key} must be nonnegative, got {v[key]}")
    if v["out"] is None:
        raise ConfigurationError("no output directory: set 'out', pass --out, or export FAIRFED_OUT")
    if v["dataset"] == "emnist":
        for key in ("emnist_images", "emnist_labels"):
            if not v[key]:
                raise ConfigurationError(f"dataset emnist requires '{key}'")
        if v["num_clients"] < 2:
            raise ConfigurationError("num_clients must be >= 2")
        if not v["alpha"] > 0:
            raise ConfigurationError(f"alpha must be positive, got {v['alpha']}")
    if v["rounds"] < 0 or v["local_epochs"] < 1 or not v["eta"] > 0:
        raise ConfigurationError("need rounds >= 0, local_epochs >= 1 and eta > 0")
    if v["lstar_window"] < 1 or v["lstar_max_epochs"] < 1:
        raise ConfigurationError("lstar_window and lstar_max_epochs must be positive")
