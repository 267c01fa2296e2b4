"""Point-cloud samplers for the flow experiments (heart targets, star inits)."""

from __future__ import annotations

import numpy as np

from .particles import ParticleSet

TARGET_SHAPES = ("heart", "ring", "gaussian")
INIT_SHAPES = ("star", "gaussian", "uniform")

# Noise is Gaussian truncated at this many scales so every sample stays
# inside [-1 - 4*noise, 1 + 4*noise]^2.
NOISE_TRUNCATION = 4.0


def _heart_raw(t: np.ndarray) -> np.ndarray:
    x = 16.0 * np.sin(t) ** 3
    y = 13.0 * np.cos(t) - 5.0 * np.cos(2 * t) - 2.0 * np.cos(3 * t) - np.cos(4 * t)
    return np.column_stack([x, y])


def _heart_frame() -> tuple[np.ndarray, float]:
    pts = _heart_raw(np.linspace(0.0, 2 * np.pi, 200_001))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return 0.5 * (lo + hi), 0.5 * float((hi - lo).max())


_HEART_CENTER, _HEART_HALF_SPAN = _heart_frame()


def heart_curve(t: np.ndarray) -> np.ndarray:
    """Heart curve at parameters ``t``, centred and scaled to fit [-1, 1]^2."""
    return (_heart_raw(np.asarray(t, dtype=np.float64)) - _HEART_CENTER) / _HEART_HALF_SPAN


def star_vertices(points: int = 5, inner_ratio: float | None = None) -> np.ndarray:
    """Closed outline of a regular star polygon with circumradius 1, tip up."""
    if inner_ratio is None:
        # ratio for the classic pentagram outline
        inner_ratio = np.cos(2 * np.pi / points) / np.cos(np.pi / points)
    k = np.arange(2 * points)
    ang = np.pi / 2 + k * np.pi / points
    r = np.where(k % 2 == 0, 1.0, inner_ratio)
    v = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    return np.vstack([v, v[:1]])


def sample_polyline(vertices: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Map ``u`` in [0, 1) to points spaced uniformly by arc length."""
    seg = np.diff(vertices, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.asarray(u) * cum[-1]
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / lengths[idx]
    return vertices[idx] + frac[:, None] * seg[idx]


def _noise(rng: np.random.Generator, n: int, noise: float) -> np.ndarray:
    if noise == 0:
        return np.zeros((n, 2))
    z = np.clip(rng.standard_normal((n, 2)), -NOISE_TRUNCATION, NOISE_TRUNCATION)
    return noise * z


def _check(n: int, noise: float):
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not noise >= 0:
        raise ValueError(f"noise must be nonnegative, got {noise}")


def make_target(shape: str, n: int, noise: float, seed: int | np.random.Generator) -> ParticleSet:
    _check(n, noise)
    rng = np.random.default_rng(seed)
    if shape == "heart":
        pts = heart_curve(rng.uniform(0.0, 2 * np.pi, n))
    elif shape == "ring":
        t = rng.uniform(0.0, 2 * np.pi, n)
        pts = 0.8 * np.column_stack([np.cos(t), np.sin(t)])
    elif shape == "gaussian":
        pts = np.clip(rng.standard_normal((n, 2)), -NOISE_TRUNCATION, NOISE_TRUNCATION) * 0.25
    else:
        raise ValueError(f"unknown target shape {shape!r}; choose from {TARGET_SHAPES}")
    return ParticleSet(pts + _noise(rng, n, noise))


def make_init(shape: str, n: int, noise: float, seed: int | np.random.Generator) -> ParticleSet:
    _check(n, noise)
    rng = np.random.default_rng(seed)
    if shape == "star":
        pts = sample_polyline(star_vertices(), rng.uniform(0.0, 1.0, n))
    elif shape == "gaussian":
        pts = np.clip(rng.standard_normal((n, 2)), -NOISE_TRUNCATION, NOISE_TRUNCATION) * 0.25
    elif shape == "uniform":
        pts = rng.uniform(-1.0, 1.0, (n, 2))
    else:
        raise ValueError(f"unknown init shape {shape!r}; choose from {INIT_SHAPES}")
    return ParticleSet(pts + _noise(rng, n, noise))
