"""Finite-alphabet quantized stabilization of marginally stable stochastic linear systems."""

from .errors import (
    DesignFailure,
    DivergedError,
    InvalidArgument,
    NotReachableError,
    NumericalFailure,
    QstabError,
    SingularMatrixError,
)
from .linalg import LinearSystem, ReachabilityInfo, reachability_index, stability_report
from .noise import NoiseModel, SeededStream, c4_analytic, c4_empirical
from .policy import ConditionReport, ControlBlock, PolicyKind, check_conditions, min_radius, min_umax, plan_block
from .quantizer import RadialQuantizer, covering_angle, design_bins, quantize, sat
from .simulator import EnsembleStats, Experiment, drift_report, ensemble, ensemble_compare, rollout

__version__ = "0.1.0"
