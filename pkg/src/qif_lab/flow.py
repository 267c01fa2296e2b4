"""Particle gradient flows that fit a point cloud to a target cloud.

Grid-based divergences compare two kernel density estimates evaluated on a
fixed R x R grid: one of the moving particles, one of the (frozen) target
samples. The Gaussian kernel is separable, so the KDE is a single
``(R, N) @ (N, R)`` product and its position derivatives come for free.

Gradients are reported per particle in the Wasserstein convention,
``N * dObjective/dx_i``: each particle carries mass ``1/N``, and scaling
by ``N`` gives the velocity field of the continuous flow. Step sizes are
then independent of the cloud size.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import divergences as dv
from .divergences import DEFAULT_CLAMP, ClampPolicy, DiscreteDistribution
from .particles import ParticleSet
from .sinkhorn import DEFAULT_MAX_ITER, DEFAULT_REG, DEFAULT_TOL, sinkhorn_distance

DIVERGENCES = ("kl", "js", "qif", "kl_flogf", "js_flogf", "one_minus_f", "mmd")


class FlowError(FloatingPointError):
    pass


class FlowDiverged(FlowError):
    """Raised when the objective or a gradient goes non-finite mid-run.

    Carries the trace recorded up to the failure.
    """

    def __init__(self, message, trace=None, particles=None):
        super().__init__(message)
        self.trace = trace
        self.particles = particles


@dataclass(frozen=True)
class GridSpec:
    bounds: tuple[float, float, float, float] = (-1.5, 1.5, -1.5, 1.5)
    resolution: int = 64

    def __post_init__(self):
        xmin, xmax, ymin, ymax = (float(b) for b in self.bounds)
        if not all(math.isfinite(b) for b in (xmin, xmax, ymin, ymax)):
            raise ValueError("grid bounds must be finite")
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"degenerate grid bounds {self.bounds}")
        if not (8 <= int(self.resolution) <= 256) or int(self.resolution) != self.resolution:
            raise ValueError(f"grid resolution must be an integer in [8, 256], got {self.resolution}")
        object.__setattr__(self, "bounds", (xmin, xmax, ymin, ymax))
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def size(self) -> int:
        return self.resolution**2

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates along x and along y."""
        xmin, xmax, ymin, ymax = self.bounds
        r = self.resolution
        k = np.arange(r) + 0.5
        return xmin + k * (xmax - xmin) / r, ymin + k * (ymax - ymin) / r

    @property
    def pitch(self) -> tuple[float, float]:
        xmin, xmax, ymin, ymax = self.bounds
        return (xmax - xmin) / self.resolution, (ymax - ymin) / self.resolution


@dataclass(frozen=True)
class KernelConfig:
    sigma: float = 0.3

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"kernel sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class SinkhornConfig:
    reg: float = DEFAULT_REG
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL


@dataclass(frozen=True)
class FlowConfig:
    divergence: str = "qif"
    learning_rate: float = 0.01
    iterations: int = 3000
    grid: GridSpec = field(default_factory=GridSpec)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    seed: int = 0
    snapshot_every: int = 100
    clamp: ClampPolicy = DEFAULT_CLAMP
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def __post_init__(self):
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"unknown divergence {self.divergence!r}; choose from {DIVERGENCES}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    sinkhorn: float
    wall_ms: float


@dataclass
class MetricTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        if not row.sinkhorn >= 0:
            raise ValueError("sinkhorn distance must be nonnegative")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    @property
    def iterations(self) -> list[int]:
        return [r.iteration for r in self.rows]

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.rows]

    @property
    def sinkhorns(self) -> list[float]:
        return [r.sinkhorn for r in self.rows]

    def to_csv(self, path, include_timing: bool = False):
        """Write ``iter,objective,sinkhorn,wall_ms``.

        Wall-clock time is not reproducible, so the column is left empty
        unless ``include_timing`` is set; this keeps repeated runs
        byte-identical.
        """
        with open(path, "w", newline="") as f:
            f.write("iter,objective,sinkhorn,wall_ms\n")
            for r in self.rows:
                wall = repr(float(r.wall_ms)) if include_timing else ""
                f.write(f"{r.iteration},{float(r.objective)!r},{float(r.sinkhorn)!r},{wall}\n")


# -- kernel density on the grid ---------------------------------------------


@dataclass
class _GridKDE:
    ax: np.ndarray  # (N, R) kernel factor along x
    ay: np.ndarray  # (N, R) kernel factor along y
    dax: np.ndarray  # d ax / d x_i
    day: np.ndarray  # d ay / d y_i
    mass: np.ndarray  # (R, R) unnormalized cell mass
    total: float


def _grid_kde(points: np.ndarray, grid: GridSpec, sigma: float, derivatives: bool = True) -> _GridKDE:
    cx, cy = grid.centers()
    dx = cx[None, :] - points[:, :1]
    dy = cy[None, :] - points[:, 1:]
    inv2s2 = 0.5 / sigma**2
    # runaway particles overflow dx**2; the vanishing-mass check reports it
    with np.errstate(over="ignore"):
        ax = np.exp(-inv2s2 * dx * dx)
        ay = np.exp(-inv2s2 * dy * dy)
    n = points.shape[0]
    mass = (ax.T @ ay) / n
    total = float(mass.sum())
    if not (total > 0 and math.isfinite(total)):
        raise FlowError("kernel density vanished on the grid; particles left the grid bounds")
    dax = ax * dx / sigma**2 if derivatives else None
    day = ay * dy / sigma**2 if derivatives else None
    return _GridKDE(ax, ay, dax, day, mass, total)


def kde_on_grid(particles: ParticleSet, grid: GridSpec, kernel: KernelConfig) -> DiscreteDistribution:
    """Gaussian KDE of ``particles`` at the grid cell centres, normalized to unit mass.

    The result has dimension ``R**2``; cell ``(i, j)`` (x index ``i``,
    y index ``j``) sits at flat index ``i * R + j``.
    """
    kde = _grid_kde(particles.points, grid, kernel.sigma, derivatives=False)
    return DiscreteDistribution.from_masses(kde.mass.reshape(-1))


# -- objectives and gradients -------------------------------------------------


def _grid_divergence(name: str, p: np.ndarray, q: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Value and d/dp for the grid-based objectives."""
    clamp = ClampPolicy(eps)
    if name in ("kl", "kl_flogf"):
        d, g = dv.kl(p, q, clamp), dv.kl_grad_p(p, q, eps)
    elif name in ("js", "js_flogf"):
        d, g = dv.js(p, q, clamp), dv.js_grad_p(p, q, eps)
    elif name == "qif":
        return dv.qif(p, q, clamp), dv.qif_grad_p(p, q, eps)
    elif name == "one_minus_f":
        f, df = dv.fidelity_grad_p(p, q, eps)
        return dv.simple_fidelity_loss(f), -df
    else:
        raise ValueError(f"{name!r} is not a grid divergence")
    if name.endswith("_flogf"):
        value = d * math.log(d) if d > 0 else 0.0
        # below the floor the scaling factor uses log(D + eps)
        factor = math.log(d) + 1.0 if d >= eps else math.log(d + eps) + 1.0
        return value, factor * g
    return d, g


def _target_weights(target, cfg: FlowConfig) -> np.ndarray:
    if isinstance(target, ParticleSet):
        return kde_on_grid(target, cfg.grid, cfg.kernel).weights
    q = dv.as_distribution(target).weights
    if q.size != cfg.grid.size:
        raise dv.DimensionMismatch(
            f"target has dimension {q.size}, grid {cfg.grid.resolution}x{cfg.grid.resolution} needs {cfg.grid.size}"
        )
    return q


def _target_points(target) -> np.ndarray:
    if not isinstance(target, ParticleSet):
        raise TypeError("mmd compares raw samples; pass the target as a ParticleSet")
    return target.points


def _mmd(x: np.ndarray, y: np.ndarray, sigma: float, gradient: bool):
    n, m = len(x), len(y)
    inv2s2 = 0.5 / sigma**2
    dxx = x[:, None, :] - x[None, :, :]
    dxy = x[:, None, :] - y[None, :, :]
    kxx = np.exp(-inv2s2 * (dxx**2).sum(-1))
    kxy = np.exp(-inv2s2 * (dxy**2).sum(-1))
    kyy_mean = float(np.exp(-inv2s2 * ((y[:, None, :] - y[None, :, :]) ** 2).sum(-1)).mean())
    value = max(float(kxx.mean()) + kyy_mean - 2.0 * float(kxy.mean()), 0.0)
    if not gradient:
        return value, None
    # N * d/dx_i of the biased V-statistic: the gradient of the witness function
    gxx = -(kxx[:, :, None] * dxx).sum(1) / sigma**2
    gxy = -(kxy[:, :, None] * dxy).sum(1) / sigma**2
    return value, 2.0 * gxx / n - 2.0 * gxy / m


def _evaluate(points: np.ndarray, target, cfg: FlowConfig, gradient: bool, q=None):
    if cfg.divergence == "mmd":
        return _mmd(points, _target_points(target), cfg.kernel.sigma, gradient)
    if q is None:
        q = _target_weights(target, cfg)
    kde = _grid_kde(points, cfg.grid, cfg.kernel.sigma, derivatives=gradient)
    p = kde.mass.reshape(-1) / kde.total
    value, g = _grid_divergence(cfg.divergence, p, q, cfg.clamp.epsilon)
    if not gradient:
        return value, None
    r = cfg.grid.resolution
    # through the normalization p = mass / total
    h = ((g - float(np.dot(g, p))) / kde.total).reshape(r, r)
    # mass = ax.T @ ay / N; the 1/N cancels against the Wasserstein scaling
    gx = (kde.dax * (kde.ay @ h.T)).sum(1)
    gy = (kde.day * (kde.ax @ h)).sum(1)
    return value, np.column_stack([gx, gy])


def flow_objective(particles: ParticleSet, target, cfg: FlowConfig) -> float:
    """Objective value for ``particles`` against ``target``.

    ``target`` is a grid :class:`DiscreteDistribution` (or a
    :class:`ParticleSet`, which is smoothed onto the grid first) for the
    grid divergences, and a :class:`ParticleSet` for ``mmd``.
    """
    return _evaluate(particles.points, target, cfg, gradient=False)[0]


def flow_gradient(particles: ParticleSet, target, cfg: FlowConfig) -> np.ndarray:
    """Per-particle gradient ``N * dObjective/dx_i`` as an ``(N, 2)`` array."""
    _, grad = _evaluate(particles.points, target, cfg, gradient=True)
    _check_finite(grad)
    return grad


def _check_finite(grad: np.ndarray):
    ok = np.all(np.isfinite(grad), axis=1)
    if not ok.all():
        bad = int(np.argmin(ok))
        raise FlowError(f"non-finite gradient at particle {bad}")


# -- driver -----------------------------------------------------------------


@dataclass
class FlowResult:
    particles: ParticleSet
    trace: MetricTrace
    snapshots: list[tuple[int, ParticleSet]]

    def __iter__(self):
        return iter((self.particles, self.trace, self.snapshots))


def run_flow(
    init: ParticleSet,
    target_samples: ParticleSet,
    cfg: FlowConfig,
    track_sinkhorn: bool = True,
    keep_snapshots: bool = True,
) -> FlowResult:
    """Plain gradient descent ``x <- x - lr * g`` for ``cfg.iterations`` steps.

    The target grid density is computed once from ``target_samples``.
    Objective and Sinkhorn distance are recorded at iteration 0, every
    ``snapshot_every`` steps, and at the final step.
    """
    if cfg.divergence == "mmd":
        target = target_samples
        q = None
    else:
        q = _target_weights(target_samples, cfg)
        target = DiscreteDistribution(q)
    sk = cfg.sinkhorn
    trace = MetricTrace()
    snapshots: list[tuple[int, ParticleSet]] = []
    x = np.array(init.points)
    t0 = time.perf_counter()

    def record(it: int, value: float):
        if not math.isfinite(value):
            raise FlowDiverged(f"objective became non-finite at iteration {it}", trace, ParticleSet(x) if np.all(np.isfinite(x)) else None)
        cloud = ParticleSet(x)
        dist = sinkhorn_distance(cloud, target_samples, sk.reg, sk.max_iter, sk.tol) if track_sinkhorn else 0.0
        trace.append(TraceRow(it, value, dist, 1000.0 * (time.perf_counter() - t0)))
        if keep_snapshots:
            snapshots.append((it, cloud))

    for it in range(cfg.iterations + 1):
        try:
            value, grad = _evaluate(x, target, cfg, gradient=it < cfg.iterations, q=q)
        except FlowError as exc:
            raise FlowDiverged(f"iteration {it}: {exc}", trace) from exc
        if it % cfg.snapshot_every == 0 or it == cfg.iterations:
            record(it, value)
        elif not math.isfinite(value):
            record(it, value)
        if it == cfg.iterations:
            break
        bad = ~np.all(np.isfinite(grad), axis=1)
        if bad.any():
            raise FlowDiverged(f"iteration {it}: non-finite gradient at particle {int(np.argmax(bad))}", trace)
        x = x - cfg.learning_rate * grad
    return FlowResult(ParticleSet(x), trace, snapshots)
