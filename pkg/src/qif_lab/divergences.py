"""Scalar divergences between discrete distributions.

Everything here is a pure function of its inputs. The fidelity overlap
``(sum_i sqrt(p_i q_i))**2`` is the workhorse; QIF, the Bhattacharyya
distance and the ``F log F`` transforms are thin layers on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike

E_INV = math.exp(-1.0)
SUM_TOLERANCE = 1e-6
MAX_ORACLE_DIM = 16


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability mass over ``d`` outcomes.

    Weights are normalized on construction. Inputs whose sum strays more
    than ``SUM_TOLERANCE`` from 1 are rejected as malformed rather than
    silently rescaled; use :meth:`from_masses` for unnormalized masses.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if w.size < 1:
            raise ValueError("distribution needs at least one outcome")
        if not np.all(np.isfinite(w)):
            raise ValueError("distribution weights must be finite")
        if np.any(w < 0):
            raise ValueError("distribution weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"distribution weights sum to {total!r}, expected 1")
        w = w / total
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_masses(cls, masses: ArrayLike) -> "DiscreteDistribution":
        """Build a distribution from nonnegative, unnormalized masses."""
        m = np.asarray(masses, dtype=np.float64).reshape(-1)
        total = m.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("masses must have a positive finite total")
        return cls(m / total)

    @classmethod
    def uniform(cls, d: int) -> "DiscreteDistribution":
        return cls(np.full(d, 1.0 / d))

    @property
    def d(self) -> int:
        return self.weights.size

    def __len__(self):
        return self.d

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.d == other.d and bool(np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash(self.weights.tobytes())


@dataclass(frozen=True)
class ClampPolicy:
    """Numerical floor applied to fidelities and log arguments."""

    epsilon: float = 1e-13

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1e-6):
            raise ValueError(f"epsilon must lie in (0, 1e-6), got {self.epsilon!r}")


DEFAULT_CLAMP = ClampPolicy()

Distribution = Union[DiscreteDistribution, ArrayLike]


def as_distribution(p: Distribution) -> DiscreteDistribution:
    if isinstance(p, DiscreteDistribution):
        return p
    return DiscreteDistribution(p)


def _pair(p: Distribution, q: Distribution) -> tuple[np.ndarray, np.ndarray]:
    pw = as_distribution(p).weights
    qw = as_distribution(q).weights
    if pw.size != qw.size:
        raise DimensionMismatch(f"dimension mismatch: {pw.size} vs {qw.size}")
    return pw, qw


def bhattacharyya_coefficient(p: Distribution, q: Distribution) -> float:
    pw, qw = _pair(p, q)
    return _coefficient(pw, qw)


def _coefficient(pw: np.ndarray, qw: np.ndarray) -> float:
    # Dividing by the mass totals (1 up to rounding) makes p == q give exactly 1.
    b = float(np.sqrt(pw * qw).sum())
    return b / math.sqrt(float(pw.sum()) * float(qw.sum()))


def fidelity(p: Distribution, q: Distribution) -> float:
    """Classical fidelity ``(sum_i sqrt(p_i) sqrt(q_i))**2``, clamped to [0, 1]."""
    bc = bhattacharyya_coefficient(p, q)
    return min(max(bc * bc, 0.0), 1.0)


def qif(p: Distribution, q: Distribution, clamp: ClampPolicy = DEFAULT_CLAMP) -> float:
    """Quantum-inspired fidelity divergence ``-F log F`` with ``F >= epsilon``.

    Bounded in ``[0, 1/e]`` and symmetric. Zero only when the
    distributions coincide; the floor keeps it strictly positive (if tiny)
    for disjoint supports.
    """
    f = max(fidelity(p, q), clamp.epsilon)
    if f >= 1.0:
        return 0.0
    return -f * math.log(f)


def kl(p: Distribution, q: Distribution, clamp: ClampPolicy = DEFAULT_CLAMP) -> float:
    """``sum_i p_i log(p_i / q_i)`` with ``0 log 0 = 0`` and ``q_i`` floored at epsilon."""
    pw, qw = _pair(p, q)
    return _kl_weights(pw, qw, clamp.epsilon)


def _kl_weights(pw: np.ndarray, qw: np.ndarray, eps: float, scale: float = 1.0) -> float:
    # sum_i p_i log(scale p_i / q_i) over the support of p
    if eps > 0:
        qw = np.maximum(qw, eps)
    if not pw.all():
        support = pw > 0
        pw, qw = pw[support], qw[support]
    return float(np.dot(pw, np.log(scale * pw / qw)))


def js(p: Distribution, q: Distribution, clamp: ClampPolicy = DEFAULT_CLAMP) -> float:
    """Jensen-Shannon divergence against the midpoint mixture, in nats."""
    pw, qw = _pair(p, q)
    # p / m == 2p / (p + q); the unhalved sum cannot underflow to zero where p > 0,
    # so it needs no floor
    total = pw + qw
    value = 0.5 * _kl_weights(pw, total, 0.0, 2.0) + 0.5 * _kl_weights(qw, total, 0.0, 2.0)
    return min(max(value, 0.0), math.log(2.0))


def bhattacharyya_distance(
    p: Distribution, q: Distribution, clamp: ClampPolicy = DEFAULT_CLAMP
) -> float:
    bc = max(bhattacharyya_coefficient(p, q), clamp.epsilon)
    return max(-math.log(bc), 0.0)


def _positive(f, name="f") -> np.ndarray:
    a = np.asarray(f, dtype=np.float64)
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise ValueError(f"{name} must be positive and finite, got {f!r}")
    return a


def _scalar_or_array(a: np.ndarray):
    return float(a) if a.ndim == 0 else a


def g_transform(f):
    """``f log f``; negative on (0, 1), zero at 1, minimum ``-1/e`` at ``f = 1/e``."""
    a = _positive(f)
    return _scalar_or_array(a * np.log(a))


def g_gradient_factor(f):
    """Derivative of :func:`g_transform`: ``log f + 1``."""
    a = _positive(f)
    return _scalar_or_array(np.log(a) + 1.0)


def simple_fidelity_loss(f):
    """``1 - F`` for a fidelity ``F`` in [0, 1]."""
    a = np.asarray(f, dtype=np.float64)
    if np.any(~np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
        raise ValueError(f"fidelity must lie in [0, 1], got {f!r}")
    return _scalar_or_array(1.0 - a)


# Partial derivatives with respect to the first argument ``p`` (``q`` held
# fixed). These feed the particle-flow chain rule and the dropout trainer.


def kl_grad_p(pw: np.ndarray, qw: np.ndarray, eps: float) -> np.ndarray:
    """d/dp of ``kl(p, q)``. ``p`` is floored at ``eps`` inside the log."""
    return np.log(np.maximum(pw, eps)) + 1.0 - np.log(np.maximum(qw, eps))


def kl_grad_q(pw: np.ndarray, qw: np.ndarray, eps: float) -> np.ndarray:
    """d/dq of ``kl(p, q)``; zero wherever ``q`` sits on the floor."""
    return np.where(qw > eps, -pw / np.maximum(qw, eps), 0.0)


def js_grad_p(pw: np.ndarray, qw: np.ndarray, eps: float) -> np.ndarray:
    m = np.maximum(0.5 * (pw + qw), eps)
    return 0.5 * (np.log(np.maximum(pw, eps)) - np.log(m))


def fidelity_grad_p(pw: np.ndarray, qw: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Return ``(F, dF/dp)`` with ``dF/dp_i = B sqrt(q_i / p_i)``, ``p`` floored at ``eps``."""
    b = float(np.sqrt(pw * qw).sum())
    f = min(b * b, 1.0)
    return f, b * np.sqrt(qw / np.maximum(pw, eps))


def qif_grad_p(pw: np.ndarray, qw: np.ndarray, eps: float) -> np.ndarray:
    """d/dp of ``-F log F``: ``-(log F + 1) dF/dp``; zero where the floor is active."""
    f, df = fidelity_grad_p(pw, qw, eps)
    if f < eps:
        return np.zeros_like(pw)
    return -(math.log(f) + 1.0) * df


# Verification-only oracle: the Uhlmann fidelity of amplitude-encoded pure
# states, computed from density matrices.


@dataclass(frozen=True, eq=False)
class PureStateOracleInput:
    amplitudes_p: np.ndarray
    amplitudes_q: np.ndarray

    def __post_init__(self):
        a = np.array(self.amplitudes_p, dtype=np.float64).reshape(-1)
        b = np.array(self.amplitudes_q, dtype=np.float64).reshape(-1)
        if a.size != b.size:
            raise DimensionMismatch(f"dimension mismatch: {a.size} vs {b.size}")
        if a.size > MAX_ORACLE_DIM:
            raise ValueError(f"oracle supports d <= {MAX_ORACLE_DIM}, got {a.size}")
        for name, v in (("amplitudes_p", a), ("amplitudes_q", b)):
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
            norm = float(np.dot(v, v))
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"{name} is not normalized (squared norm {norm!r})")
        object.__setattr__(self, "amplitudes_p", a)
        object.__setattr__(self, "amplitudes_q", b)

    @classmethod
    def from_distributions(cls, p: Distribution, q: Distribution) -> "PureStateOracleInput":
        pw, qw = _pair(p, q)
        return cls(np.sqrt(pw), np.sqrt(qw))


def _psd_eigh(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Eigenvalues below the numerical-rank threshold are roundoff of exact
    # zeros; their square roots would otherwise leak ~1e-8 into the trace.
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    cutoff = m.shape[0] * np.finfo(np.float64).eps * max(float(np.abs(vals).max()), 1.0)
    vals = np.where(vals > cutoff, vals, 0.0)
    return vals, vecs


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = _psd_eigh(m)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fidelity_oracle(inp: PureStateOracleInput) -> float:
    """``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2`` for ``rho = |p><p|``, ``sigma = |q><q|``."""
    rho = np.outer(inp.amplitudes_p, inp.amplitudes_p)
    sigma = np.outer(inp.amplitudes_q, inp.amplitudes_q)
    root = _sqrtm_psd(rho)
    vals, _ = _psd_eigh(root @ sigma @ root)
    f = float(np.sqrt(vals).sum()) ** 2
    return min(max(f, 0.0), 1.0)
