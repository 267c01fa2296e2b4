"""Small labelled 2-D datasets and their CSV format (``f0..f{k-1},label``)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if x.ndim != 2:
            raise DatasetError(f"features must be a 2-D array, got shape {x.shape}")
        if y.ndim != 1 or len(y) != len(x):
            raise DatasetError("labels must be a vector with one entry per feature row")
        if len(x) == 0:
            raise DatasetError("dataset is empty")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features contain non-finite values")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DatasetError("labels must be integers")
        y = y.astype(np.int64)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= k:
            raise DatasetError(f"labels must lie in [0, {k})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", int(k))

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def missing_classes(self) -> list[int]:
        present = set(np.unique(self.labels).tolist())
        return [c for c in range(self.n_classes) if c not in present]

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([f"f{i}" for i in range(self.n_features)] + ["label"])
            for row, label in zip(self.features.tolist(), self.labels.tolist()):
                w.writerow([repr(v) for v in row] + [label])

    @classmethod
    def from_csv(cls, path: str | Path, n_classes: int | None = None) -> "Dataset":
        path = Path(path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        if not rows:
            raise DatasetError(f"{path}: empty file")
        header, body = rows[0], [r for r in rows[1:] if r]
        k = len(header) - 1
        expected = [f"f{i}" for i in range(k)] + ["label"]
        if k < 1 or header != expected:
            raise DatasetError(f"{path}: header must be {','.join(expected) if k >= 1 else 'f0,...,label'}, got {','.join(header)}")
        try:
            x = np.array([[float(v) for v in r[:k]] for r in body], dtype=np.float64)
            y = np.array([int(r[k]) for r in body], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise DatasetError(f"{path}: malformed row ({exc})") from exc
        if any(len(r) != k + 1 for r in body):
            raise DatasetError(f"{path}: every row needs {k + 1} columns")
        try:
            return cls(x.reshape(-1, k), y, n_classes)
        except DatasetError as exc:
            raise DatasetError(f"{path}: {exc}") from exc


def two_moons(n: int, noise: float, rng: np.random.Generator) -> Dataset:
    """Two interleaved half circles; ``n // 2`` points in class 0."""
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    outer = np.column_stack([np.cos(t0), np.sin(t0)])
    inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([outer, inner]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(x[order], y[order], 2)


def rings(n: int, noise: float, rng: np.random.Generator, factor: float = 0.5) -> Dataset:
    """Two concentric circles, radii 1 and ``factor``."""
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, 2 * np.pi, n0)
    t1 = rng.uniform(0.0, 2 * np.pi, n1)
    x = np.vstack([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        factor * np.column_stack([np.cos(t1), np.sin(t1)]),
    ]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(x[order], y[order], 2)


GENERATORS = {"two_moons": two_moons, "rings": rings}
