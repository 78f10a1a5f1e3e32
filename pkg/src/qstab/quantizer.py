"""Finite radial quantizers on the r-sphere.

A quantizer here is a finite set of unit directions ``u_1..u_N`` plus a radius
``r``. States outside the open r-ball are mapped to ``r * u_i`` for the
direction best aligned with them; everything inside the ball goes to a single
interior bin (the origin by default). The covering angle ``phi`` is the worst
angle between an exterior state and its image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import DesignFailure, InvalidArgument

UNIT_TOL = 1e-12
DISTINCT_ANGLE = 1e-9
# relative slack for the ball boundary and for alignment ties
BOUNDARY_RTOL = 1e-12
TIE_RTOL = 1e-12


def _rowdot(X, Y):
    """``X @ Y.T`` with a fixed per-element summation order.

    The result for a given row never depends on how many rows are batched
    together, which keeps ensemble output independent of chunking.
    """
    out = X[:, 0:1] * Y[:, 0][None, :]
    for k in range(1, X.shape[1]):
        out = out + X[:, k : k + 1] * Y[:, k][None, :]
    return out


def _rowsq(X):
    acc = X[:, 0] * X[:, 0]
    for k in range(1, X.shape[1]):
        acc = acc + X[:, k] * X[:, k]
    return acc


def _rownorm(X):
    return np.sqrt(_rowsq(X))


def unit_angle(a, b):
    """Angle between unit vectors, accurate near 0 and pi."""
    return 2.0 * math.asin(min(1.0, float(np.linalg.norm(np.subtract(a, b))) / 2.0))


def sat(r, y):
    """Radial saturation: ``min(r, |y|) * y / |y|``, with ``sat(0) = 0``."""
    y = np.asarray(y, dtype=float)
    n = float(np.linalg.norm(y))
    if n <= r:
        return y.copy()
    return (r / n) * y


def sat_batch(r, Y):
    n = _rownorm(Y)
    scale = np.where(n > r, r / np.where(n > 0, n, 1.0), 1.0)
    return Y * scale[:, None]


def project(v, x):
    """Split ``x`` into components parallel and orthogonal to ``v``."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        raise InvalidArgument("cannot project onto the zero vector")
    e = v / nv
    parallel = float(e @ x) * e
    return parallel, x - parallel


@dataclass(frozen=True)
class RadialQuantizer:
    r: float
    directions: np.ndarray
    interior_bin: np.ndarray = None
    phi: float = None
    certified: bool = True

    def __post_init__(self):
        U = np.array(self.directions, dtype=float)
        if U.ndim != 2 or U.shape[0] < 1:
            raise InvalidArgument("directions must be a nonempty (N, d) array")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise InvalidArgument(f"radius must be positive and finite, got {self.r}")
        norms = np.linalg.norm(U, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise InvalidArgument("directions must have unit norm")
        for i in range(len(U)):
            for j in range(i):
                if unit_angle(U[i], U[j]) <= DISTINCT_ANGLE:
                    raise InvalidArgument(f"directions {j} and {i} coincide")
        d = U.shape[1]
        z = np.zeros(d) if self.interior_bin is None else np.array(self.interior_bin, dtype=float)
        if z.shape != (d,):
            raise InvalidArgument(f"interior bin must have shape ({d},)")
        U.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "directions", U)
        object.__setattr__(self, "interior_bin", z)
        if self.phi is None:
            phi, exact = _covering(U)
            object.__setattr__(self, "phi", phi)
            object.__setattr__(self, "certified", exact)

    @property
    def d(self):
        return self.directions.shape[1]

    @property
    def n_bins(self):
        """Number of bins on the sphere (the interior bin is not counted)."""
        return self.directions.shape[0]

    @property
    def bins(self):
        return np.vstack([self.interior_bin, self.r * self.directions])

    def with_radius(self, r):
        return replace(self, r=float(r))


def covering_angle(q, samples=200_000, seed=0):
    """Worst angle between a direction on the sphere and its nearest bin.

    Exact in one and two dimensions. For ``d >= 3`` the maximum is taken over
    ``samples`` scrambled Sobol points and is therefore only a lower bound.
    """
    U = q.directions if isinstance(q, RadialQuantizer) else np.asarray(q, dtype=float)
    return _covering(U, samples, seed)[0]


def _covering(U, samples=200_000, seed=0):
    d = U.shape[1]
    if d == 1:
        signs = set(np.sign(U[:, 0]))
        return (0.0 if signs == {1.0, -1.0} else math.pi), True
    if d == 2:
        ang = np.sort(np.arctan2(U[:, 1], U[:, 0]))
        gaps = np.diff(np.append(ang, ang[0] + 2.0 * math.pi))
        if gaps.max() - gaps.min() <= 1e-12:
            # uniform configuration, half-gap known in closed form
            return math.pi / len(U), True
        return float(gaps.max()) / 2.0, True
    P = sphere_points(d, samples, seed)
    dots = P @ U.T
    best = dots.max(axis=1)
    worst = int(np.argmin(best))
    phi = unit_angle(P[worst], U[int(np.argmax(dots[worst]))])
    return max(phi, _refine_holes(U, P, dots, best)), False


def _refine_holes(U, P, dots, best, k=256):
    """Polish the worst sample points into candidate deep holes.

    A local maximum of the distance to the nearest direction sits at the point
    equidistant from ``d`` directions. For each of the ``k`` worst samples we
    take its ``d`` nearest directions and evaluate their circumcentre.
    """
    d = U.shape[1]
    if len(U) < d:
        return 0.0
    out = 0.0
    for i in np.argsort(best)[:k]:
        S = U[np.argsort(-dots[i])[:d]]
        try:
            c = np.linalg.solve(S, np.ones(d))
        except np.linalg.LinAlgError:
            continue
        c /= np.linalg.norm(c)
        if c @ P[i] < 0:
            c = -c
        j = int(np.argmax(U @ c))
        out = max(out, unit_angle(c, U[j]))
    return out


def sphere_points(d, n, seed=0):
    """``n`` low-discrepancy points on the unit sphere in R^d."""
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(n)))
    X = sob.random_base2(m)[:n]
    X = np.clip(X, 1e-12, 1 - 1e-12)
    G = ndtri(X)
    return G / np.linalg.norm(G, axis=1, keepdims=True)


def uniform_circle(n):
    k = np.arange(n)
    ang = 2.0 * math.pi * k / n
    return np.column_stack([np.cos(ang), np.sin(ang)])


def design_bins(d, r, phi_target, *, samples=None, margin=0.1, max_bins=20_000, seed=0):
    """Build a radial quantizer whose covering angle is at most ``phi_target``.

    Parameters
    ----------
    d : int
        State dimension.
    r : float
        Saturation radius.
    phi_target : float
        Requested covering angle, in ``(0, pi/4)``.
    samples : int, optional
        Sample-set size used for ``d >= 3``; defaults grow with ``d``.
    margin : float
        For ``d >= 3``, greedy insertion stops once the sampled covering angle
        is below ``(1 - margin) * phi_target``.

    Returns
    -------
    RadialQuantizer
        In two dimensions the directions are ``N = ceil(pi / phi_target)``
        equally spaced angles starting at 0 and the angle ``pi / N`` is exact.
        In three or more dimensions ``certified`` is False.
    """
    if int(d) != d or d < 1:
        raise InvalidArgument(f"dimension must be a positive integer, got {d}")
    if not (0 < phi_target < math.pi / 4):
        raise InvalidArgument(f"phi_target must lie in (0, pi/4), got {phi_target}")
    d = int(d)
    if d == 1:
        return RadialQuantizer(r, np.array([[1.0], [-1.0]]), phi=0.0, certified=True)
    if d == 2:
        n = math.ceil(math.pi / phi_target)
        if n > 1 and math.pi / (n - 1) <= phi_target * (1 + 1e-12):
            n -= 1
        return RadialQuantizer(r, uniform_circle(n), phi=math.pi / n, certified=True)

    samples = samples or min(400_000, 20_000 * 2 ** (d - 3))
    P = sphere_points(d, samples, seed)
    stop = math.cos((1.0 - margin) * phi_target)
    chosen = [0]
    best = P @ P[0]
    while best.min() < stop:
        if len(chosen) >= max_bins:
            raise DesignFailure(
                f"no {max_bins}-bin covering with angle {phi_target:.4g} found in d={d}"
            )
        i = int(np.argmin(best))
        chosen.append(i)
        np.maximum(best, P @ P[i], out=best)
    U = P[chosen]
    phi = max(_covering(U, samples, seed + 1)[0], math.acos(min(1.0, float(best.min()))))
    if phi > phi_target:
        raise DesignFailure(
            f"sampled covering angle {phi:.4g} exceeds target {phi_target:.4g}; raise samples or margin"
        )
    return RadialQuantizer(r, U, phi=phi, certified=False)


def quantize_batch(q, Z):
    """Quantize each row of ``Z``.

    Rows with norm below ``r`` go to the interior bin. Other rows go to ``r``
    times the direction maximizing the inner product; near-ties within a
    relative ``1e-12`` resolve to the lowest direction index.
    """
    Z = np.asarray(Z, dtype=float)
    n = _rownorm(Z)
    dots = _rowdot(Z, q.directions)
    top = dots.max(axis=1)
    idx = np.argmax(dots >= (top - TIE_RTOL * n)[:, None], axis=1)
    out = q.r * q.directions[idx]
    inside = n < q.r * (1.0 - BOUNDARY_RTOL)
    out[inside] = q.interior_bin
    return out


def quantize(q, z):
    z = np.asarray(z, dtype=float)
    return quantize_batch(q, z.reshape(1, -1))[0]


def export_bins(q, path):
    lines = [f"{q.d} {q.r!r}"]
    lines += [" ".join(f"{c:.17g}" for c in u) for u in q.directions]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_bins(path):
    """Read a bin file written by :func:`export_bins`.

    The covering angle is recomputed from the directions, not trusted.
    """
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        d, r = int(rows[0][0]), float(rows[0][1])
        U = np.array([[float(c) for c in row] for row in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise InvalidArgument(f"malformed bins file {path}: {exc}") from exc
    if U.ndim != 2 or U.shape[1] != d:
        raise InvalidArgument(f"bins file {path}: expected {d} components per direction")
    # 17 significant digits round-trip, but renormalize to absorb hand edits
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    return RadialQuantizer(r, U)
