"""Synthetic datasets and their CSV persistence."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_DIM = 64
_SPLITS = {"train": 0, "test": 1}


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = ""
    seed: int | None = None
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def _split_rng(seed: int, split: str) -> np.random.Generator:
    if split not in _SPLITS:
        raise ValueError(f"split must be one of {sorted(_SPLITS)}")
    return np.random.default_rng([seed, _SPLITS[split]])


def blob_centers(n_classes: int, dim: int) -> np.ndarray:
    """Unit-circle centers (first two coordinates), or evenly spaced on [-1, 1] in 1D."""
    centers = np.zeros((n_classes, dim))
    if dim == 1:
        centers[:, 0] = np.linspace(-1.0, 1.0, n_classes)
    else:
        angles = 2 * np.pi * np.arange(n_classes) / n_classes
        centers[:, 0] = np.cos(angles)
        centers[:, 1] = np.sin(angles)
    return centers


def make_blobs(n_per_class: int, n_classes: int = 3, dim: int = 2, spread: float = 0.3,
               seed: int = 0, split: str = "train") -> Dataset:
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"dim must be in 1..{MAX_DIM}")
    rng = _split_rng(seed, split)
    centers = blob_centers(n_classes, dim)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    inputs = centers[labels] + spread * rng.standard_normal((len(labels), dim))
    return Dataset(inputs, labels, n_classes, "blobs", seed, split)


def make_step1d(n: int = 60, boundary: float = 0.0, seed: int = 0, outlier: float = -0.75,
                gap: float = 0.15, span: float = 1.5, split: str = "train") -> Dataset:
    """Two classes split at ``boundary`` plus one mislabelled point at ``outlier``.

    ``n - 1`` points are drawn uniformly from ``[-span, span]`` outside
    ``outlier +- gap`` and labelled 1 iff ``x >= boundary``.  The last point
    sits at ``outlier`` with the opposite label to its side.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    rng = _split_rng(seed, split)
    xs = []
    while len(xs) < n - 1:
        cand = rng.uniform(-span, span, size=2 * n)
        xs.extend(c for c in cand if abs(c - outlier) > gap)
    xs = np.array(xs[: n - 1])
    labels = (xs >= boundary).astype(np.int64)
    xs = np.append(xs, outlier)
    labels = np.append(labels, 0 if outlier >= boundary else 1)
    return Dataset(xs[:, None], labels, 2, "step1d", seed, split)


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i}" for i in range(ds.dim)] + ["label"])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([format(v, ".17g") for v in x] + [int(y)])


def load_dataset(path, n_classes: int | None = None, name: str | None = None,
                 split: str = "train") -> Dataset:
    """Read a CSV written by :func:`save_dataset`.

    Without ``n_classes`` the class count is inferred as ``max(label) + 1``.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if not header or header[-1] != "label" or not all(h.startswith("x_") for h in header[:-1]):
        raise ValueError(f"{path}: line 1: bad header {header}")
    dim = len(header) - 1
    if dim < 1:
        raise ValueError(f"{path}: line 1: no input columns")
    inputs, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 1:
            raise ValueError(f"{path}: line {lineno}: expected {dim + 1} fields, got {len(row)}")
        try:
            inputs.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        if not np.all(np.isfinite(inputs[-1])):
            raise ValueError(f"{path}: line {lineno}: non-finite input")
        if labels[-1] < 0 or (n_classes is not None and labels[-1] >= n_classes):
            raise ValueError(f"{path}: line {lineno}: label {labels[-1]} out of range")
    if not labels:
        raise ValueError(f"{path}: no data rows")
    nc = n_classes if n_classes is not None else max(labels) + 1
    return Dataset(np.array(inputs), np.array(labels), nc, name or path.stem, None, split)
