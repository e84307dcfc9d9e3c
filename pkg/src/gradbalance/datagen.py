"""Synthetic long-tailed dataset generation and CSV ingest.

Training class sizes follow the exponential profile
``N_k = round(n_max * beta**(-k/(K-1)))`` so that the largest/smallest ratio
equals the imbalance factor beta (up to rounding). Features are isotropic
Gaussians around per-class means placed along seeded random directions. The
test split is exactly balanced.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaError, ValidationError


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of a generated long-tailed dataset."""

    num_classes: int
    feature_dim: int
    n_max: int
    imbalance_factor: float
    class_separation: float = 3.0
    noise_sigma: float = 1.0
    test_per_class: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ValidationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.n_max < 1:
            raise ValidationError(f"n_max must be >= 1, got {self.n_max}")
        if self.imbalance_factor < 1:
            raise ValidationError(
                f"imbalance_factor must be >= 1, got {self.imbalance_factor}"
            )
        if self.class_separation <= 0:
            raise ValidationError("class_separation must be positive")
        if self.noise_sigma <= 0:
            raise ValidationError("noise_sigma must be positive")
        if self.test_per_class < 1:
            raise ValidationError("test_per_class must be >= 1")
        if round(self.n_max / self.imbalance_factor) < 1:
            raise ValidationError(
                f"smallest class would round to zero samples "
                f"(n_max={self.n_max}, imbalance_factor={self.imbalance_factor})"
            )


@dataclass(frozen=True)
class Dataset:
    """Labeled feature vectors with a train/test split marker per record.

    ``class_counts`` are the per-class counts of the train split only.
    Arrays are frozen after construction and safe to share across threads.
    """

    features: np.ndarray
    labels: np.ndarray
    is_test: np.ndarray
    num_classes: int
    class_counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        is_test = np.asarray(self.is_test, dtype=bool)
        if feats.ndim != 2 or not (feats.shape[0] == labels.shape[0] == is_test.shape[0]):
            raise ValidationError("features, labels, is_test must have matching rows")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValidationError("labels out of range [0, num_classes)")
        counts = np.bincount(labels[~is_test], minlength=self.num_classes)
        if not np.array_equal(counts, np.asarray(self.class_counts)):
            raise ValidationError("class_counts inconsistent with train labels")
        for arr, name in ((feats, "features"), (labels, "labels"), (is_test, "is_test")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        counts.setflags(write=False)
        object.__setattr__(self, "class_counts", counts)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_train(self) -> int:
        return int(np.count_nonzero(~self.is_test))

    @property
    def train_features(self) -> np.ndarray:
        return self.features[~self.is_test]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[~self.is_test]

    @property
    def test_features(self) -> np.ndarray:
        return self.features[self.is_test]

    @property
    def test_labels(self) -> np.ndarray:
        return self.labels[self.is_test]


def longtail_counts(spec: DatasetSpec) -> np.ndarray:
    """Per-class train counts under the exponential imbalance profile."""
    k = np.arange(spec.num_classes)
    raw = spec.n_max * spec.imbalance_factor ** (-k / (spec.num_classes - 1))
    counts = np.rint(raw).astype(np.int64)
    bad = np.nonzero(counts < 1)[0]
    if bad.size:
        raise ValidationError(
            f"class {int(bad[0])} rounds to {int(counts[bad[0]])} samples; "
            "increase n_max or decrease imbalance_factor"
        )
    return counts


def generate_longtailed(spec: DatasetSpec) -> Dataset:
    """Draw a seeded synthetic long-tailed dataset with a balanced test split."""
    counts = longtail_counts(spec)
    rng = np.random.default_rng(spec.seed)

    directions = rng.standard_normal((spec.num_classes, spec.feature_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.class_separation * directions

    feats, labels, is_test = [], [], []
    for c in range(spec.num_classes):
        n_train = int(counts[c])
        block = means[c] + spec.noise_sigma * rng.standard_normal(
            (n_train + spec.test_per_class, spec.feature_dim)
        )
        feats.append(block)
        labels.append(np.full(n_train + spec.test_per_class, c, dtype=np.int64))
        marker = np.zeros(n_train + spec.test_per_class, dtype=bool)
        marker[n_train:] = True
        is_test.append(marker)

    return Dataset(
        features=np.vstack(feats),
        labels=np.concatenate(labels),
        is_test=np.concatenate(is_test),
        num_classes=spec.num_classes,
        class_counts=counts,
    )


def save_csv(dataset: Dataset, path, split: str = "train") -> None:
    """Write one split as CSV: header ``label,d=<dim>`` then ``label,f1,...,fd`` rows."""
    if split == "train":
        feats, labels = dataset.train_features, dataset.train_labels
    elif split == "test":
        feats, labels = dataset.test_features, dataset.test_labels
    else:
        raise ValidationError(f"split must be 'train' or 'test', got {split!r}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", f"d={dataset.feature_dim}"])
        for y, row in zip(labels, feats):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])


def load_csv(path, test_path=None, num_classes: int | None = None) -> Dataset:
    """Read a dataset from CSV; an optional second file supplies the test split.

    Rejects malformed rows, non-finite features, and rows whose width
    disagrees with the ``d=<dim>`` header.
    """
    feats, labels = _read_rows(path)
    if test_path is not None:
        test_feats, test_labels = _read_rows(test_path)
        if test_feats.shape[1] != feats.shape[1]:
            raise SchemaError(
                f"test file dimension {test_feats.shape[1]} differs from "
                f"train dimension {feats.shape[1]}"
            )
        features = np.vstack([feats, test_feats])
        all_labels = np.concatenate([labels, test_labels])
        is_test = np.concatenate(
            [np.zeros(len(labels), dtype=bool), np.ones(len(test_labels), dtype=bool)]
        )
    else:
        features, all_labels = feats, labels
        is_test = np.zeros(len(labels), dtype=bool)

    k = int(all_labels.max()) + 1 if num_classes is None else num_classes
    counts = np.bincount(all_labels[~is_test], minlength=k)
    return Dataset(
        features=features,
        labels=all_labels,
        is_test=is_test,
        num_classes=k,
        class_counts=counts,
    )


def _read_rows(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        if len(header) != 2 or header[0].strip() != "label" or not header[1].strip().startswith("d="):
            raise ParseError(f"{path}: expected header 'label,d=<int>', got {header!r}", line=1)
        try:
            dim = int(header[1].strip()[2:])
        except ValueError:
            raise ParseError(f"{path}: bad dimension in header {header[1]!r}", line=1) from None
        if dim < 1:
            raise SchemaError(f"{path}: dimension must be positive, got {dim}")

        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise SchemaError(
                    f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}"
                )
            try:
                y = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from None
            if y < 0:
                raise ParseError(f"{path}:{lineno}: negative label {y}", line=lineno)
            if not all(math.isfinite(v) for v in values):
                raise ParseError(
                    f"{path}:{lineno}: non-finite feature value", line=lineno
                )
            labels.append(y)
            feats.append(values)
    if not labels:
        raise ParseError(f"{path}: no data rows", line=2)
    return np.asarray(feats, dtype=np.float64), np.asarray(labels, dtype=np.int64)
