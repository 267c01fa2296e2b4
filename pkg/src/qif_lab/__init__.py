"""Fidelity-based divergences, particle gradient flows and QR-Drop training."""

from .divergences import (
    ClampPolicy,
    DiscreteDistribution,
    PureStateOracleInput,
    bhattacharyya_distance,
    fidelity,
    fidelity_oracle,
    g_gradient_factor,
    g_transform,
    js,
    kl,
    qif,
    simple_fidelity_loss,
)
from .flow import FlowConfig, GridSpec, KernelConfig, MetricTrace, flow_gradient, kde_on_grid, run_flow
from .particles import ParticleSet
from .shapes import make_init, make_target
from .sinkhorn import sinkhorn_distance

__version__ = "0.1.0"
