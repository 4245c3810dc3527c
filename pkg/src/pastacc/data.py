"""Datasets: IDX ingestion and seeded synthetic Gaussian clusters."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ConsistencyError, EmptyInputError, FormatError, LengthError
from .rng import box_muller, stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class LabeledExample(NamedTuple):
    features: np.ndarray
    label: int
    sample_id: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented labelled data with stable integer sample ids."""

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    _order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # private copies: they are frozen below
        ids = np.array(self.ids, dtype=np.int64)
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2 or len(features) != len(ids) or labels.shape != ids.shape:
            raise ConsistencyError("ids, features and labels disagree in length")
        if len(np.unique(ids)) != len(ids):
            raise ConsistencyError("sample ids must be unique")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ConsistencyError(f"labels outside [0, {self.n_classes})")
        if not np.all(np.isfinite(features)):
            raise ConsistencyError("features must be finite")
        for name, arr in (("ids", ids), ("features", features), ("labels", labels)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_classes", int(self.n_classes))
        object.__setattr__(self, "_order", np.argsort(ids, kind="stable"))

    def __len__(self):
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.features[i], int(self.labels[i]), int(self.ids[i]))

    def rows(self, sample_ids) -> np.ndarray:
        """Row indices of the given sample ids (raises KeyError on unknown ids)."""
        sample_ids = np.asarray(sample_ids, dtype=np.int64)
        pos = np.searchsorted(self.ids[self._order], sample_ids)
        pos = np.clip(pos, 0, max(len(self.ids) - 1, 0))
        rows = self._order[pos] if len(self.ids) else pos
        if sample_ids.size and (not len(self.ids) or np.any(self.ids[rows] != sample_ids)):
            raise KeyError("unknown sample id")
        return rows

    def subset(self, sample_ids) -> "Dataset":
        """Sub-dataset holding ``sample_ids`` in ascending id order."""
        rows = self.rows(np.sort(np.asarray(sample_ids, dtype=np.int64)))
        return Dataset(self.ids[rows], self.features[rows], self.labels[rows], self.n_classes)

    def of_class(self, k: int) -> "Dataset":
        mask = self.labels == k
        return Dataset(self.ids[mask], self.features[mask], self.labels[mask], self.n_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int
    n_features: int
    means: tuple
    sigma: float
    samples_per_class: int
    seed: int

    def __post_init__(self):
        if self.n_classes < 2 or self.n_features < 1:
            raise ConfigurationError("need at least 2 classes and 1 feature")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be positive")
        means = np.asarray(self.means, dtype=np.float64)
        if means.shape != (self.n_classes, self.n_features):
            raise ConfigurationError(
                f"means must have shape {(self.n_classes, self.n_features)}, got {means.shape}"
            )
        object.__setattr__(self, "means", tuple(map(tuple, means.tolist())))

    @classmethod
    def random_means(cls, n_classes, n_features, separation, sigma, samples_per_class, seed):
        """Spec whose class means are standard-normal draws scaled by ``separation``."""
        gen = stream(seed, purpose="synthetic-means")
        means = separation * box_muller(gen, n_classes * n_features).reshape(n_classes, n_features)
        return cls(n_classes, n_features, tuple(map(tuple, means)), sigma, samples_per_class, seed)


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Isotropic Gaussian clusters, class-major sample ids ``0..c*n-1``."""
    means = np.asarray(spec.means)
    n, d = spec.samples_per_class, spec.n_features
    feats = []
    for k in range(spec.n_classes):
        gen = stream(spec.seed, k, purpose="synthetic-samples")
        feats.append(means[k] + spec.sigma * box_muller(gen, n * d).reshape(n, d))
    total = n * spec.n_classes
    return Dataset(
        np.arange(total),
        np.concatenate(feats),
        np.repeat(np.arange(spec.n_classes), n),
        spec.n_classes,
    )


def _read_idx_header(f, path, magic, ndim):
    head = f.read(4 + 4 * ndim)
    if len(head) < 4:
        raise LengthError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", head[:4])
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(head) < 4 + 4 * ndim:
        raise LengthError(f"{path}: truncated header")
    return struct.unpack(f">{ndim}I", head[4:])


def read_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (unsigned bytes), pixels scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        n, rows, cols = _read_idx_header(f, images_path, IDX_IMAGES_MAGIC, 3)
        need = n * rows * cols
        available = os.fstat(f.fileno()).st_size - 16
        if available < need:
            raise LengthError(f"{images_path}: declares {need} pixel bytes, has {available}")
        pixels = np.frombuffer(f.read(need), dtype=np.uint8)
    with open(labels_path, "rb") as f:
        (m,) = _read_idx_header(f, labels_path, IDX_LABELS_MAGIC, 1)
        available = os.fstat(f.fileno()).st_size - 8
        if available < m:
            raise LengthError(f"{labels_path}: declares {m} labels, has {available}")
        labels = np.frombuffer(f.read(m), dtype=np.uint8).astype(np.int64)
    if m != n:
        raise ConsistencyError(f"{n} images but {m} labels")
    if n == 0:
        raise EmptyInputError("IDX files hold no examples")
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    if n_classes is None:
        n_classes = max(int(labels.max()) + 1, 2)
    return Dataset(np.arange(n), features, labels, n_classes)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (n, rows, cols) and labels (n,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def concat(parts) -> Dataset:
    """Stack datasets (e.g. MNIST train + test files), renumbering ids from 0."""
    parts = list(parts)
    return Dataset(
        np.arange(sum(len(p) for p in parts)),
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        max(p.n_classes for p in parts),
    )
