from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """N points in the plane, stored as an ``(N, 2)`` float array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"expected an (N, 2) array, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("particle set must be nonempty")
        if not np.all(np.isfinite(pts)):
            bad = int(np.argmax(~np.all(np.isfinite(pts), axis=1)))
            raise ValueError(f"particle {bad} has a non-finite coordinate")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def translated(self, offset) -> "ParticleSet":
        return ParticleSet(self.points + np.asarray(offset, dtype=np.float64))

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as f:
            f.write("x,y\n")
            for x, y in self.points.tolist():
                f.write(f"{x!r},{y!r}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "ParticleSet":
        with open(path) as f:
            header = f.readline().strip()
            if header != "x,y":
                raise ValueError(f"{path}: expected header 'x,y', got {header!r}")
            rows = [line.split(",") for line in f if line.strip()]
        return cls(np.array(rows, dtype=np.float64).reshape(-1, 2))
