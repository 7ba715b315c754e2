"""Tabular classification data: CSV ingestion, z-score normalization, splitting.

All functions are pure and deterministic; datasets are plain numpy arrays.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

EPS_STD = 1e-8


@dataclass
class Dataset:
    """A rectangular feature matrix with integer class labels."""

    features: np.ndarray  # float64 [num_samples, num_features]
    labels: np.ndarray  # int64 [num_samples]
    num_classes: int
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match number of samples")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices],
                       self.num_classes, list(self.feature_names))


@dataclass
class FeatureStats:
    """Per-feature mean and standard deviation taken from a training set."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / np.maximum(self.std, EPS_STD)


def load_csv(path: str, label_column: str) -> Dataset:
    """Load a headered CSV; the named column holds class labels.

    Labels are remapped to contiguous 0-based ids in order of first
    appearance; every other column must parse as a finite real number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ValueError(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        feature_names = [h for i, h in enumerate(header) if i != label_idx]

        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: line {row_num} has {len(row)} cells, expected {len(header)}")
            values = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: line {row_num}, column {header[i]!r}: cannot parse {cell!r} as a number")
                if not math.isfinite(v):
                    raise ValueError(
                        f"{path}: line {row_num}, column {header[i]!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
            raw_labels.append(row[label_idx].strip())

    if not rows:
        raise ValueError(f"{path}: empty dataset (header only)")

    label_map: dict[str, int] = {}
    labels = []
    for lab in raw_labels:
        if lab not in label_map:
            label_map[lab] = len(label_map)
        labels.append(label_map[lab])
    if len(label_map) < 2:
        raise ValueError(f"{path}: fewer than 2 distinct labels ({sorted(label_map)})")

    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64),
                   num_classes=len(label_map), feature_names=feature_names)


def standardize(train: Dataset, others: list[Dataset] | tuple[Dataset, ...] = ()) \
        -> tuple[list[Dataset], FeatureStats]:
    """Z-score every dataset using mean/stddev computed from ``train`` only.

    Returns the standardized datasets (train first, then ``others`` in order)
    and the statistics so later stages can transform fresh inputs identically.
    """
    if train.num_samples < 1:
        raise ValueError("training set must have at least one sample")
    stats = FeatureStats(mean=train.features.mean(axis=0),
                         std=train.features.std(axis=0))
    out = []
    for ds in [train, *others]:
        out.append(Dataset(stats.apply(ds.features), ds.labels,
                           ds.num_classes, list(ds.feature_names)))
    return out, stats


def split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; floor(n * fraction) samples go to train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = data.num_samples
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(n * train_fraction))
    if k == 0 or k == n:
        raise ValueError(f"split of {n} samples at fraction {train_fraction} leaves an empty side")
    return data.subset(perm[:k]), data.subset(perm[k:])


def make_blobs(samples: int, features: int, classes: int, spread: float = 1.0,
               center_scale: float = 2.5, seed: int = 0) -> Dataset:
    """Synthetic Gaussian-blob classification data for self-contained runs.

    Class centers are drawn uniformly from [-center_scale, center_scale]^d;
    points are isotropic Gaussians around their class center. Class counts
    are balanced (remainder spread over the first classes).
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if samples < classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_scale, center_scale, size=(classes, features))
    counts = [samples // classes + (1 if c < samples % classes else 0) for c in range(classes)]
    xs, ys = [], []
    for c, cnt in enumerate(counts):
        xs.append(centers[c] + spread * rng.standard_normal((cnt, features)))
        ys.append(np.full(cnt, c, dtype=np.int64))
    features_arr = np.concatenate(xs, axis=0)
    labels = np.concatenate(ys)
    perm = rng.permutation(samples)
    return Dataset(features_arr[perm], labels[perm], num_classes=classes,
                   feature_names=[f"f{i}" for i in range(features)])
