"""Datasets, forget/remain partitions and file loaders."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError, SelectionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # (N, d)
    labels: np.ndarray  # (N, K) one-hot
    is_train: np.ndarray  # (N,) bool

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        Y = np.asarray(self.labels, dtype=np.float64)
        split = np.asarray(self.is_train, dtype=bool)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", Y)
        object.__setattr__(self, "is_train", split)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or split.shape != (X.shape[0],):
            raise InvalidInputError("features, labels and split tags must have matching rows")
        if not np.all((Y == 0) | (Y == 1)) or not np.all(Y.sum(axis=1) == 1):
            raise InvalidInputError("labels must be one-hot rows")
        if Y.shape[1] < 2:
            raise InvalidInputError("need at least two classes")

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_index(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    @property
    def train_rows(self) -> np.ndarray:
        return np.flatnonzero(self.is_train)

    @property
    def test_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.is_train)

    def rows(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.features[idx], self.labels[idx]

    def check_coverage(self) -> None:
        """Require at least one train and one test row for every class."""
        if len(self.labels) < self.n_classes:
            raise InvalidInputError("fewer rows than classes")
        cls = self.class_index
        for k in range(self.n_classes):
            if not np.any((cls == k) & self.is_train) or not np.any((cls == k) & ~self.is_train):
                raise InvalidInputError(f"class {k} lacks a train or test row")


def stratified_split(class_index: np.ndarray, test_fraction: float, seed: int) -> np.ndarray:
    """Boolean train mask with ``round(test_fraction * n_k)`` test rows per class."""
    rng = np.random.default_rng([seed, 0x5917])
    is_train = np.ones(class_index.size, dtype=bool)
    for k in np.unique(class_index):
        members = np.flatnonzero(class_index == k)
        n_test = int(round(test_fraction * members.size))
        if n_test:
            is_train[rng.permutation(members)[:n_test]] = False
    return is_train


def make_gaussian_blobs(n_classes: int, n_per_class: int, dim: int,
                        separation: float, seed: int, test_fraction: float = 0.2) -> LabeledDataset:
    """Isotropic unit-variance clusters with pairwise mean distance >= separation."""
    if n_classes < 2:
        raise InvalidInputError("need at least two classes")
    if not separation > 0:
        raise InvalidInputError("separation must be positive")
    rng = np.random.default_rng([seed, 0xB10B])
    if n_classes <= dim:
        # scaled basis vectors: every pair sits exactly `separation` apart
        means = np.eye(n_classes, dim) * (separation / np.sqrt(2.0))
    else:
        means = rng.standard_normal((n_classes, dim))
        gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
        gaps[np.diag_indices(n_classes)] = np.inf
        means *= separation / gaps.min()
    X = np.concatenate([m + rng.standard_normal((n_per_class, dim)) for m in means])
    cls = np.repeat(np.arange(n_classes), n_per_class)
    return LabeledDataset(X, one_hot(cls, n_classes), stratified_split(cls, 0.2, seed))


# -- forget rules --------------------------------------------------------------

@dataclass(frozen=True)
class ClassFraction:
    """Forget ``round(fraction * |class train rows|)`` rows of one class."""
    cls: int
    fraction: float

    def describe(self) -> str:
        return f"class-fraction(class={self.cls}, fraction={self.fraction})"


@dataclass(frozen=True)
class FeaturePredicate:
    """Forget every row whose feature ``feature`` exceeds ``threshold``.

    When ``quantile`` is given the threshold is that quantile of the feature
    over all rows of the dataset, and ``threshold`` is ignored.
    """
    feature: int
    threshold: float = 0.0
    quantile: float | None = None

    def resolve(self, dataset: LabeledDataset) -> float:
        if self.quantile is None:
            return float(self.threshold)
        return float(np.quantile(dataset.features[:, self.feature], self.quantile))

    def describe(self) -> str:
        if self.quantile is not None:
            return f"feature[{self.feature}] > q{self.quantile}"
        return f"feature[{self.feature}] > {self.threshold}"


@dataclass(frozen=True)
class ForgetPartition:
    forget: np.ndarray  # train-row indices, F
    remain: np.ndarray  # train-row indices, R
    forget_test: np.ndarray  # held-out rows sharing F's defining property
    remain_test: np.ndarray
    mia_heldout: np.ndarray  # held-out comparison rows for the membership attack
    rule: str = ""


def select_forget(dataset: LabeledDataset, rule, seed: int) -> ForgetPartition:
    cls = dataset.class_index
    train, test = dataset.train_rows, dataset.test_rows
    if isinstance(rule, ClassFraction):
        if not 0 <= rule.cls < dataset.n_classes:
            raise SelectionError(f"class {rule.cls} out of range")
        if not 0 < rule.fraction <= 1:
            raise SelectionError("fraction must lie in (0, 1]")
        rng = np.random.default_rng([seed, 0xF063, rule.cls])
        members = train[cls[train] == rule.cls]
        n_forget = int(round(rule.fraction * members.size))
        if n_forget == 0:
            raise SelectionError(f"{rule.describe()} selects no training rows")
        forget = np.sort(rng.permutation(members)[:n_forget])
        class_test = test[cls[test] == rule.cls]
        n_ft = max(1, int(round(rule.fraction * class_test.size))) if class_test.size else 0
        forget_test = np.sort(rng.permutation(class_test)[:n_ft])
        mia_heldout = class_test
    elif isinstance(rule, FeaturePredicate):
        if not 0 <= rule.feature < dataset.dim:
            raise SelectionError(f"feature {rule.feature} out of range")
        tau = rule.resolve(dataset)
        hit = dataset.features[:, rule.feature] > tau
        forget = train[hit[train]]
        if forget.size == 0:
            raise SelectionError(f"{rule.describe()} selects no training rows")
        forget_test = test[hit[test]]
        # same-class held-out rows outside the subgroup
        classes = np.unique(cls[forget])
        mia_heldout = test[~hit[test] & np.isin(cls[test], classes)]
    else:
        raise SelectionError(f"unknown forget rule {rule!r}")
    remain = np.setdiff1d(train, forget)
    remain_test = np.setdiff1d(test, forget_test)
    return ForgetPartition(forget, remain, forget_test, remain_test, mia_heldout, rule.describe())


# -- loaders -------------------------------------------------------------------

def _from_arrays(X, labels, n_classes, test_fraction, seed) -> LabeledDataset:
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = max(int(labels.max()) + 1, 2)
    return LabeledDataset(X, one_hot(labels, n_classes), stratified_split(labels, test_fraction, seed))


def load_csv(path, *, header: bool = False, n_classes: int | None = None,
             pixel_scale: float | None = None, test_fraction: float = 0.2,
             seed: int = 0) -> LabeledDataset:
    """Rows of ``d`` feature columns followed by an integer label column."""
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8")
    rows, offset = [], 0
    lines = text.splitlines(keepends=True)
    for lineno, line in enumerate(lines, start=1):
        start = offset
        offset += len(line.encode("utf-8"))
        if header and lineno == 1:
            continue
        if not line.strip():
            continue
        fields = next(csv.reader([line]))
        try:
            values = [float(v) for v in fields[:-1]]
            label = int(fields[-1])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad row on line {lineno}: {exc}", offset=start) from exc
        if rows and len(values) != len(rows[0][0]):
            raise ParseError(f"line {lineno} has {len(values) + 1} columns, expected "
                             f"{len(rows[0][0]) + 1}", offset=start)
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise ParseError(f"label {label} on line {lineno} outside [0, {n_classes})", offset=start)
        if not values:
            raise ParseError(f"line {lineno} has no feature columns", offset=start)
        rows.append((values, label))
    if not rows:
        raise ParseError("CSV contains no data rows", offset=0)
    X = np.array([r[0] for r in rows], dtype=np.float64)
    if pixel_scale:
        X = X / pixel_scale
    return _from_arrays(X, [r[1] for r in rows], n_classes, test_fraction, seed)


def _read_idx(path, magic: int):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ParseError(f"{path}: truncated IDX header", offset=len(data))
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise ParseError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(data) < hdr:
        raise ParseError(f"{path}: truncated IDX dimension block", offset=len(data))
    dims = struct.unpack(f">{ndim}I", data[4:hdr])
    expected = int(np.prod(dims))
    if len(data) - hdr != expected:
        raise ParseError(f"{path}: payload has {len(data) - hdr} bytes, header declares {expected}",
                         offset=hdr)
    return dims, np.frombuffer(data, dtype=np.uint8, offset=hdr)


def load_idx(images_path, labels_path, *, n_classes: int | None = None,
             test_fraction: float = 0.2, seed: int = 0) -> LabeledDataset:
    """FashionMNIST-style big-endian IDX pair; pixels scaled to [0, 1]."""
    (n, *shape), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (n_labels,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if n != n_labels:
        raise ParseError(f"{n} images but {n_labels} labels", offset=4)
    if n_classes is not None and labels.size and labels.max() >= n_classes:
        bad = int(np.argmax(labels >= n_classes))
        raise ParseError(f"label {labels[bad]} >= K={n_classes}", offset=8 + bad)
    if n == 0:
        raise ParseError(f"{images_path}: no images", offset=8)
    X = pixels.reshape(n, int(np.prod(shape))).astype(np.float64) / 255.0
    return _from_arrays(X, labels, n_classes, test_fraction, seed)
