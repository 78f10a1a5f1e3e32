"""Stabilization conditions and the k-step quantized dead-beat policy.

The policy holds the control fixed over blocks of ``kappa`` steps (the
reachability index). At the start of each block it quantizes the state and
applies the minimum-norm input sequence that would, without noise, cancel the
quantized state's propagation: ``u_bar = -R^+ A^kappa q(x)``. The baseline
policy replaces ``q(x)`` by the radially saturated state ``sat_r(x)``, which
is what the quantized policy tends to as the bins get denser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidArgument, NotReachableError
from .linalg import reachability_matrix, singular_extremes, stability_report
from .quantizer import _rowdot, _rownorm, quantize_batch, sat_batch

ORTHO_TOL = 1e-9


class PolicyKind(str, Enum):
    QUANTIZED = "quantized"
    BASELINE = "baseline"


def min_radius(kappa, sigma_max_RI, c4, phi):
    """Strict lower bound on the saturation radius.

    ``sqrt(kappa) * sigma_max(R_kappa(A, I)) * c4**(1/4) / (cos(phi) - sin(phi))``
    """
    if not (0.0 <= phi < math.pi / 4):
        raise InvalidArgument(f"phi must lie in [0, pi/4), got {phi}")
    if c4 < 0:
        raise InvalidArgument(f"c4 must be nonnegative, got {c4}")
    return math.sqrt(kappa) * sigma_max_RI * c4**0.25 / (math.cos(phi) - math.sin(phi))


def min_umax(r, sigma_min_RAB):
    if sigma_min_RAB <= 0:
        raise NotReachableError("sigma_min of the reachability matrix is zero")
    return r / sigma_min_RAB


def drift_witness(r, kappa, sigma_max_RI, c4, phi):
    """Guaranteed per-block decrease of ``|x|`` outside the r-ball.

    This is ``r (cos phi - sin phi) - sqrt(kappa) sigma_max(R_kappa(A, I)) c4^(1/4)``;
    it is positive exactly when ``r`` exceeds :func:`min_radius`.
    """
    return r * (math.cos(phi) - math.sin(phi)) - math.sqrt(kappa) * sigma_max_RI * c4**0.25


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float

    def line(self):
        return f"{self.name} {'pass' if self.passed else 'fail'} {self.margin:.17g}"


@dataclass(frozen=True)
class ConditionReport:
    kappa: int | None
    r_min: float
    r: float
    phi: float
    umax_min: float
    umax: float
    c4: float
    checks: list = field(default_factory=list)
    phi_certified: bool = True

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def b_theoretical(self):
        if self.kappa is None or not math.isfinite(self.r_min):
            return float("nan")
        return (self.r - self.r_min) * (math.cos(self.phi) - math.sin(self.phi))

    def lines(self):
        return [c.line() for c in self.checks]


def check_conditions(sys, reach, q, c4, umax):
    """Evaluate every stabilization hypothesis; never raises on a failed check.

    ``reach`` may be None, in which case reachability is attempted here and a
    failure shows up as a failed ``reachable`` check.
    """
    checks = []
    st = stability_report(sys.A, ORTHO_TOL)
    checks.append(Check("orthogonal_A", st.orthogonal, ORTHO_TOL - st.orthogonality_defect))

    if reach is None:
        try:
            reach = sys.reach
        except NotReachableError:
            reach = None
    if reach is not None:
        checks.append(Check("reachable", True, reach.sigma_min - 1e-9 * reach.sigma_max))
    else:
        smin, smax = singular_extremes(reachability_matrix(sys.A, sys.B, sys.d))
        checks.append(Check("reachable", False, smin - 1e-9 * smax))

    phi = float(q.phi)
    checks.append(Check("phi_admissible", phi < math.pi / 4, math.pi / 4 - phi))

    c4_ok = c4 is not None and math.isfinite(c4) and c4 >= 0
    if reach is not None and phi < math.pi / 4 and c4_ok:
        r_min = min_radius(reach.kappa, reach.sigma_max_RI, c4, phi)
    else:
        r_min = float("inf")
    checks.append(Check("radius_condition", q.r > r_min, q.r - r_min))

    umax_min = min_umax(q.r, reach.sigma_min) if reach is not None else float("inf")
    checks.append(Check("umax_condition", umax >= umax_min, umax - umax_min))
    checks.append(Check("noise_moment_finite", c4_ok, c4 if c4_ok else -math.inf))

    return ConditionReport(
        kappa=None if reach is None else reach.kappa,
        r_min=r_min,
        r=q.r,
        phi=phi,
        umax_min=umax_min,
        umax=float(umax),
        c4=float(c4) if c4 is not None else float("nan"),
        checks=checks,
        phi_certified=q.certified,
    )


@dataclass(frozen=True)
class ControlBlock:
    u_steps: np.ndarray  # (kappa, m), first row applied first
    stacked_norm: float


def block_gain(reach):
    """``R^+ A^kappa`` as a (kappa*m, d) matrix."""
    return reach.Rk_AB_pinv @ reach.A_pow_kappa


def plan_blocks(kind, reach, q, X, gain=None):
    """Batched policy: control blocks for every row of ``X``.

    Returns an array of shape ``(n, kappa, m)``.
    """
    K = block_gain(reach) if gain is None else gain
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = quantize_batch(q, X) if PolicyKind(kind) is PolicyKind.QUANTIZED else sat_batch(q.r, X)
    U = -_rowdot(Y, K)
    return U.reshape(len(X), reach.kappa, -1)


def plan_block(kind, reach, A_pow_kappa, q, x):
    """One control block ``-R^+ A^kappa y`` with ``y = q(x)`` or ``sat_r(x)``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if PolicyKind(kind) is PolicyKind.QUANTIZED:
        y = quantize_batch(q, x)[0]
    else:
        y = sat_batch(q.r, x)[0]
    ubar = -(reach.Rk_AB_pinv @ (A_pow_kappa @ y))
    return ControlBlock(ubar.reshape(reach.kappa, -1), float(np.linalg.norm(ubar)))


def control_alphabet_size(kappa, q):
    """Count of distinct per-step controls the policy can emit: kappa * |Q|."""
    return kappa * (q.n_bins + 1)


def block_norms(U):
    """Stacked norm of each block in an ``(n, kappa, m)`` array."""
    return _rownorm(U.reshape(len(U), -1))
