"""Synthetic classification datasets, CSV round-trip, label noise, batching.

Datasets are immutable after construction (arrays are marked read-only) and
safe to share across threads.  Desk-scale stand-ins only; there are no image
loaders here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from samkit.errors import ConfigurationError

DATASET_KINDS = ("blobs", "two-moons", "file")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix, integer labels, class count, and where it came from."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    provenance: str = "synthetic-blobs"

    def __post_init__(self):
        X = _freeze(np.asarray(self.X, dtype=np.float64))
        y = _freeze(np.asarray(self.y, dtype=np.int64))
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ConfigurationError("features must be (n, d) with one label per row")
        if self.n_classes < 1:
            raise ConfigurationError("class count must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ConfigurationError("labels must lie in [0, n_classes)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.X[idx], self.y[idx], self.n_classes, self.provenance)


@dataclass(frozen=True)
class NoiseSpec:
    """Label-flip probability and the seed of the flip draw."""

    flip_prob: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigurationError("flip probability must lie in [0, 1]")


def _blob_centers(n_classes: int, n_features: int) -> np.ndarray:
    """Fixed class centers on a circle of radius 4 in the first two dims."""
    centers = np.zeros((n_classes, max(n_features, 2)))
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers[:, 0] = 4.0 * np.cos(angles)
    centers[:, 1] = 4.0 * np.sin(angles)
    return centers[:, :n_features]


def make_dataset(
    kind: str,
    n: int = 2000,
    seed: int = 0,
    n_features: int = 2,
    n_classes: int = 3,
    cluster_std: float = 1.0,
    moon_noise: float = 0.2,
    path: str | Path | None = None,
) -> LabeledDataset:
    """Build a dataset deterministically from a seed.

    ``blobs`` draws Gaussian clusters around fixed circle centers;
    ``two-moons`` is the classic interleaved half-circles (always 2-D,
    2 classes); ``file`` loads a CSV written by :func:`save_csv`.
    Synthetic kinds are class-balanced within one example.
    """
    if kind == "file":
        if path is None:
            raise ConfigurationError("dataset kind 'file' requires a path")
        return load_csv(path)
    if kind not in DATASET_KINDS:
        raise ConfigurationError(f"unknown dataset kind {kind!r}")
    classes = 2 if kind == "two-moons" else n_classes
    if n < 2 * classes:
        raise ConfigurationError(f"need at least 2 examples per class, got n={n}")
    if kind == "blobs":
        if n_features < 1:
            raise ConfigurationError("blobs need at least one feature")
        X, y = make_blobs(
            n_samples=n,
            centers=_blob_centers(n_classes, n_features),
            cluster_std=cluster_std,
            random_state=seed,
            shuffle=True,
        )
        return LabeledDataset(X, y, n_classes, "synthetic-blobs")
    X, y = make_moons(n_samples=n, noise=moon_noise, random_state=seed, shuffle=True)
    return LabeledDataset(X, y, 2, "two-moons")


def inject_label_noise(dataset: LabeledDataset, spec: NoiseSpec) -> LabeledDataset:
    """Flip each label, with probability ``flip_prob``, to a uniformly random
    *different* class.  Features are untouched; callers must keep their
    evaluation split away from this function."""
    if dataset.n_classes < 2:
        raise ConfigurationError("label noise needs at least 2 classes")
    rng = np.random.default_rng(spec.seed)
    flip = rng.random(dataset.n) < spec.flip_prob
    offsets = rng.integers(1, dataset.n_classes, size=dataset.n)
    noisy = np.where(flip, (dataset.y + offsets) % dataset.n_classes, dataset.y)
    return LabeledDataset(dataset.X, noisy, dataset.n_classes, dataset.provenance)


def minibatch_iter(
    dataset: LabeledDataset, batch_size: int, seed: int, epoch: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of batches: a seeded shuffle partitioned into consecutive
    slices of ``batch_size`` (the last batch may be smaller).  The same
    (seed, epoch) pair always yields the same sequence."""
    if batch_size < 1:
        raise ConfigurationError("batch size must be at least 1")
    if batch_size > dataset.n:
        raise ConfigurationError(
            f"batch size {batch_size} exceeds dataset size {dataset.n}"
        )
    perm = np.random.default_rng((seed, epoch)).permutation(dataset.n)
    for start in range(0, dataset.n, batch_size):
        idx = perm[start : start + batch_size]
        yield dataset.X[idx], dataset.y[idx]


def batches_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def save_csv(dataset: LabeledDataset, path: str | Path) -> Path:
    """Write ``# features=<d> classes=<k>`` then one ``f1,...,fd,label`` row
    per example.  Floats use repr, so the file round-trips exactly."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# features={dataset.dim} classes={dataset.n_classes}\n")
        for row, label in zip(dataset.X, dataset.y):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")
    return path


def load_csv(path: str | Path) -> LabeledDataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# features="):
            raise ConfigurationError(f"{path}: missing '# features=<d> classes=<k>' header")
        try:
            parts = dict(kv.split("=") for kv in header[2:].split())
            dim, classes = int(parts["features"]), int(parts["classes"])
        except (ValueError, KeyError) as exc:
            raise ConfigurationError(f"{path}: malformed header {header!r}") from exc
        feats, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != dim + 1:
                raise ConfigurationError(f"{path}:{lineno}: expected {dim + 1} columns")
            feats.append([float(c) for c in cells[:-1]])
            labels.append(int(cells[-1]))
    X = np.asarray(feats, dtype=np.float64).reshape(len(labels), dim)
    return LabeledDataset(X, np.asarray(labels), classes, "file")


def shuffle_dataset(dataset: LabeledDataset, seed: int) -> LabeledDataset:
    """Seeded reordering; use before an order-based split on data whose row
    order may be meaningful (e.g. class-sorted CSV files)."""
    order = np.random.default_rng((seed, 0x5_11FF1E)).permutation(dataset.n)
    return dataset.subset(order)


def train_test_split_dataset(
    dataset: LabeledDataset, test_fraction: float
) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic tail split of the dataset in its current order."""
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigurationError("test fraction must lie in [0, 1)")
    n_test = int(round(dataset.n * test_fraction))
    n_train = dataset.n - n_test
    if n_train < 1:
        raise ConfigurationError("split leaves no training data")
    return dataset.subset(np.arange(n_train)), dataset.subset(np.arange(n_train, dataset.n))
