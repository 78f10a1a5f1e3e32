"""Small dense matrix primitives and the system-theoretic quantities built on them.

Everything here works on plain ``numpy`` arrays. Matrices are expected to be
tiny (state and input dimension at most a dozen or so), so no attempt is made
at sparse or blocked algorithms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgument, NotReachableError, NumericalFailure, SingularMatrixError

RANK_RTOL = 1e-9
EIG_CLUSTER_TOL = 1e-7


def as_matrix(M, name="matrix"):
    """Coerce ``M`` to a finite 2-D float array or raise InvalidArgument."""
    M = np.array(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.ndim != 2 or M.shape[0] == 0 or M.shape[1] == 0:
        raise InvalidArgument(f"{name} must be a nonempty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return M


def numerical_rank(M, rtol=RANK_RTOL):
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def matrix_power(A, k):
    """A**k by repeated multiplication (k >= 0)."""
    P = np.eye(A.shape[0])
    for _ in range(k):
        P = A @ P
    return P


def reachability_matrix(A, M, k):
    """Return ``(A^{k-1} M  ...  A M  M)``.

    The highest power comes first, so the block multiplying the first control
    in a k-step sequence is leftmost.
    """
    A = as_matrix(A, "A")
    M = as_matrix(M, "M")
    if A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"A must be square, got {A.shape}")
    if M.shape[0] != A.shape[0]:
        raise InvalidArgument(f"M must have {A.shape[0]} rows, got {M.shape[0]}")
    if int(k) != k or k < 1:
        raise InvalidArgument(f"k must be a positive integer, got {k}")
    blocks = [M]
    for _ in range(int(k) - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks[::-1])


def singular_extremes(M):
    """Smallest and largest singular values of ``M``.

    For a wide matrix the smallest value is the ``rows``-th one, i.e. the
    one governing the row space, which is what a right inverse cares about.
    """
    M = as_matrix(M)
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[-1]), float(s[0])


def pseudoinverse(M, rtol=RANK_RTOL):
    """Right inverse ``M^T (M M^T)^{-1}`` of a full-row-rank matrix."""
    M = as_matrix(M)
    smin, smax = singular_extremes(M)
    if M.shape[0] > M.shape[1] or smax == 0.0 or smin <= rtol * smax:
        raise SingularMatrixError(
            f"matrix of shape {M.shape} is not full row rank (sigma_min={smin:.3g})"
        )
    return np.linalg.solve(M @ M.T, M).T


@dataclass(frozen=True)
class ReachabilityInfo:
    kappa: int
    Rk_AB: np.ndarray
    Rk_AB_pinv: np.ndarray
    sigma_min: float
    sigma_max: float
    sigma_max_RI: float
    A_pow_kappa: np.ndarray


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time system ``x+ = A x + B u + w``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = as_matrix(B, "B")
        if A.shape[0] != A.shape[1]:
            raise InvalidArgument(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise InvalidArgument(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @cached_property
    def reach(self):
        """Reachability data at the reachability index (raises if unreachable)."""
        return reachability_info(self)


def reachability_index(sys, k_max=None):
    """Smallest k <= k_max such that ``(B, AB, ..., A^{k-1} B)`` has rank d."""
    k_max = sys.d if k_max is None else int(k_max)
    if k_max < 1:
        raise InvalidArgument(f"k_max must be >= 1, got {k_max}")
    for k in range(1, k_max + 1):
        if numerical_rank(reachability_matrix(sys.A, sys.B, k)) == sys.d:
            return k
    raise NotReachableError(f"(A, B) does not reach rank {sys.d} within {k_max} steps")


def reachability_info(sys, k_max=None):
    kappa = reachability_index(sys, k_max)
    R = reachability_matrix(sys.A, sys.B, kappa)
    smin, smax = singular_extremes(R)
    _, smax_ri = singular_extremes(reachability_matrix(sys.A, np.eye(sys.d), kappa))
    out = ReachabilityInfo(
        kappa=kappa,
        Rk_AB=R,
        Rk_AB_pinv=pseudoinverse(R),
        sigma_min=smin,
        sigma_max=smax,
        sigma_max_RI=smax_ri,
        A_pow_kappa=matrix_power(sys.A, kappa),
    )
    for arr in (out.Rk_AB, out.Rk_AB_pinv, out.A_pow_kappa):
        arr.setflags(write=False)
    return out


@dataclass(frozen=True)
class StabilityReport:
    eigenvalue_magnitudes: list
    lyapunov_stable: bool
    orthogonal: bool
    orthogonality_defect: float
    # eigenvalue clusters on the unit circle as (value, algebraic, geometric)
    unit_circle_clusters: list


def _cluster(eigs, tol):
    clusters = []
    for lam in sorted(eigs, key=lambda z: (z.real, z.imag)):
        for c in clusters:
            if abs(c[0] - lam) <= tol:
                c.append(lam)
                break
        else:
            clusters.append([lam])
    return [(complex(np.mean(c)), len(c)) for c in clusters]


def stability_report(A, tol=1e-9):
    """Eigenvalue-based Lyapunov stability diagnosis and an orthogonality test.

    Unit-circle eigenvalues must be semisimple; the geometric multiplicity of
    a cluster of nearby eigenvalues is ``d - rank(A - lambda I)``.
    """
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"A must be square, got {A.shape}")
    d = A.shape[0]
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue computation failed: {exc}") from exc
    mags = np.abs(eigs)
    stable = bool(np.all(mags <= 1.0 + tol))
    circle = []
    for lam, alg in _cluster(eigs, EIG_CLUSTER_TOL):
        if abs(abs(lam) - 1.0) > tol:
            continue
        geo = d - numerical_rank(A - lam * np.eye(d))
        circle.append((lam, alg, geo))
        if geo != alg:
            stable = False
    defect = float(np.max(np.abs(A.T @ A - np.eye(d))))
    return StabilityReport(
        eigenvalue_magnitudes=sorted(float(v) for v in mags),
        lyapunov_stable=stable,
        orthogonal=defect <= tol,
        orthogonality_defect=defect,
        unit_circle_clusters=circle,
    )
