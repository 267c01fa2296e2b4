"""Entropic optimal transport between two point clouds.

Log-stabilized Sinkhorn iterations with uniform marginals and squared
Euclidean cost. Used only as a convergence metric for the particle flows.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .particles import ParticleSet

DEFAULT_REG = 0.05
DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-9


class SinkhornError(FloatingPointError):
    pass


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        c = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(c, 0.0)


def _scale(cost, mu, nu, f, g, reg, max_iter, tol, check_every, absorb_threshold):
    """Sinkhorn scaling at one ``reg``, warm-started from potentials ``f, g``.

    Returns ``(f, g, plan, iterations)`` with the final scalings absorbed
    into the potentials.
    """
    n, m = cost.shape

    def log_update(g):
        # exact log-domain sweep; rebalances potentials so no kernel row is all zeros
        fn = reg * (np.log(mu) - logsumexp((g[None, :] - cost) / reg, axis=1))
        gn = reg * (np.log(nu) - logsumexp((fn[:, None] - cost) / reg, axis=0))
        return fn, gn

    def kernel():
        return np.exp((f[:, None] + g[None, :] - cost) / reg)

    f, g = log_update(g)
    k = kernel()
    u = np.ones(n)
    v = np.ones(m)
    it = 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            u = mu / (k @ v)
            v = nu / (k.T @ u)
            finite = np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and u.min() > 0 and v.min() > 0
            if not finite:
                f, g = log_update(g)
                k = kernel()
                u = mu / k.sum(1)
                v = nu / (k.T @ u)
                if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(f))):
                    raise SinkhornError(
                        f"Sinkhorn scaling vectors under/overflowed at reg={reg}; try a larger reg"
                    )
            if max(u.max(), v.max()) > absorb_threshold or min(u.min(), v.min()) < 1 / absorb_threshold:
                f = f + reg * np.log(u)
                g = g + reg * np.log(v)
                k = kernel()
                u = np.ones(n)
                v = np.ones(m)
            if it % check_every == 0:
                row = u * (k @ v)
                if np.abs(row - mu).sum() < tol:
                    break
        plan = u[:, None] * k * v[None, :]
        f = f + reg * np.log(u)
        g = g + reg * np.log(v)
    if not (np.all(np.isfinite(plan)) and np.all(np.isfinite(f)) and np.all(np.isfinite(g))) or plan.sum() <= 0:
        raise SinkhornError(f"transport plan underflowed at reg={reg}; try a larger reg")
    return f, g, plan, it


def sinkhorn_plan(
    a: np.ndarray,
    b: np.ndarray,
    reg: float = DEFAULT_REG,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    check_every: int = 10,
    absorb_threshold: float = 1e30,
    anneal_factor: float = 0.1,
    anneal_iter: int = 50,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(plan, cost_matrix, iterations)`` for uniform marginals on ``a`` and ``b``.

    Scaling iterations run on a kernel shifted by the dual potentials
    ``f, g``; whenever a scaling vector grows past ``absorb_threshold`` it is
    folded into the potentials in the log domain and the kernel is rebuilt,
    so nothing overflows even for small ``reg``.

    Small ``reg`` relative to the cost scale converges very slowly from a
    cold start, so ``reg`` is annealed geometrically (``anneal_factor`` per
    stage, at most ``anneal_iter`` iterations each) from the largest cost
    down to the requested value, warm-starting the potentials. Only the
    final stage is bounded by ``max_iter`` and ``tol`` (L1 error of the row
    marginal, checked every ``check_every`` iterations). The returned
    iteration count covers the final stage.
    """
    if not reg > 0:
        raise ValueError(f"reg must be positive, got {reg}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    n, m = len(a), len(b)
    cost = squared_distances(a, b)
    if not np.all(np.isfinite(cost)):
        raise SinkhornError(f"cost matrix is not finite at reg={reg}; rescale the inputs or try a larger reg")
    mu = np.full(n, 1.0 / n)
    nu = np.full(m, 1.0 / m)
    f = np.zeros(n)
    g = np.zeros(m)
    stage = float(cost.max()) * anneal_factor
    while stage > reg:
        f, g, _, _ = _scale(cost, mu, nu, f, g, stage, anneal_iter, tol, check_every, absorb_threshold)
        stage *= anneal_factor
    _, _, plan, it = _scale(cost, mu, nu, f, g, reg, max_iter, tol, check_every, absorb_threshold)
    return plan, cost, it


def sinkhorn_distance(
    a: ParticleSet | np.ndarray,
    b: ParticleSet | np.ndarray,
    reg: float = DEFAULT_REG,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> float:
    """Transport cost ``<plan, C>`` of the entropic-regularized coupling."""
    pa = a.points if isinstance(a, ParticleSet) else ParticleSet(a).points
    pb = b.points if isinstance(b, ParticleSet) else ParticleSet(b).points
    plan, cost, _ = sinkhorn_plan(pa, pb, reg, max_iter, tol)
    return max(float((plan * cost).sum()), 0.0)
