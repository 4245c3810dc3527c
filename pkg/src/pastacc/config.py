"""Run configuration: a flat ``key = value`` text file plus overrides.

Lines starting with ``#`` or ``;`` are comments.  Unknown keys and values that
fail to parse are collected and reported together.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .errors import ConfigurationError


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "synthetic"
    # synthetic source
    classes: int = 3
    features: int = 10
    separation: float = 1.0
    sigma: float = 1.0
    samples_per_class: int = 1000
    data_seed: int = 7
    # IDX source; the optional second pair is appended (e.g. MNIST test files)
    idx_images: str = ""
    idx_labels: str = ""
    idx_images_extra: str = ""
    idx_labels_extra: str = ""
    # model / protocol
    hidden: tuple = (16,)
    rounds: int = 30
    ratio: float = 6.0
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 3
    estimator: str = "per-sample"
    minibatch_size: int = 50
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.dataset not in ("synthetic", "idx"):
            problems.append(f"dataset: expected 'synthetic' or 'idx', got {self.dataset!r}")
        if self.dataset == "idx" and not (self.idx_images and self.idx_labels):
            problems.append("idx_images/idx_labels: required when dataset = idx")
        if self.estimator not in ("per-sample", "minibatch"):
            problems.append(f"estimator: expected 'per-sample' or 'minibatch', got {self.estimator!r}")
        for name in ("classes", "features", "samples_per_class", "rounds", "batch_size",
                     "epochs", "minibatch_size"):
            if getattr(self, name) < 1:
                problems.append(f"{name}: must be >= 1")
        if self.classes < 2:
            problems.append("classes: must be >= 2")
        if not self.sigma > 0:
            problems.append("sigma: must be > 0")
        if not self.ratio > 0:
            problems.append("ratio: must be > 0")
        if not self.learning_rate >= 0:
            problems.append("learning_rate: must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            problems.append("hidden: needs one or more positive layer sizes")
        if not 0 <= self.seed < 2**64:
            problems.append("seed: must be an unsigned 64-bit integer")
        if problems:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems))

    @property
    def gradsum_batch(self) -> Optional[int]:
        return self.minibatch_size if self.estimator == "minibatch" else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return build_config(raw)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, value):
    default = _FIELDS[name].default
    if isinstance(value, str):
        value = value.strip()
    if name == "hidden":
        if isinstance(value, str):
            return tuple(int(v) for v in value.replace(",", " ").split())
        return tuple(int(v) for v in value)
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def build_config(raw: dict, overrides: Optional[dict] = None) -> RunConfig:
    merged = dict(raw)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    problems, values = [], {}
    for key, value in merged.items():
        name = key.strip().replace("-", "_")
        if name not in _FIELDS:
            problems.append(f"{key}: unknown key")
            continue
        try:
            values[name] = _coerce(name, value)
        except (TypeError, ValueError):
            problems.append(f"{key}: cannot parse {value!r}")
    if problems:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems))
    return RunConfig(**values)


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    parser.optionxform = str
    try:
        with open(path) as f:
            parser.read_string("[run]\n" + f.read(), source=str(path))
    except (configparser.Error, OSError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return dict(parser["run"])


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    raw = read_config_file(path) if path else {}
    return build_config(raw, overrides)
