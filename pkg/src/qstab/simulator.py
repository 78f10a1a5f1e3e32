"""Closed-loop rollouts, Monte Carlo ensembles and drift diagnostics.

Runs are simulated in vectorized batches. All arithmetic inside a batch is
elementwise with a fixed summation order, so a run's trajectory is bitwise the
same whether it is simulated alone, in a batch of 1000 or split across threads.
Each run draws its noise from its own stream seeded with ``mix(seed ^ run)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import DivergedError, InvalidArgument
from .noise import SeededStream, run_seed, sample_block
from .policy import PolicyKind, block_gain, block_norms, drift_witness, plan_blocks
from .quantizer import _rowdot, _rownorm, _rowsq

DIVERGENCE_NORM = 1e12
MIN_DRIFT_SAMPLES = 30


def step(sys, x, u, w):
    """One step of ``x+ = A x + B u + w``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if x.shape != (sys.d,) or u.shape != (sys.m,) or w.shape != (sys.d,):
        raise InvalidArgument(
            f"expected x, w in R^{sys.d} and u in R^{sys.m}, got {x.shape}, {u.shape}, {w.shape}"
        )
    return sys.A @ x + sys.B @ u + w


@dataclass(frozen=True)
class Experiment:
    """Everything needed to roll out one closed loop."""

    sys: object
    q: object
    noise: object
    x0: np.ndarray
    horizon: int = 200
    seed: int = 0
    kind: PolicyKind = PolicyKind.QUANTIZED

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.sys.d,):
            raise InvalidArgument(f"x0 must have {self.sys.d} entries")
        if self.q.d != self.sys.d or self.noise.dimension != self.sys.d:
            raise InvalidArgument("quantizer, noise and system dimensions disagree")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "kind", PolicyKind(self.kind))

    @property
    def reach(self):
        return self.sys.reach

    @property
    def steps(self):
        """Horizon truncated to whole control blocks."""
        k = self.reach.kappa
        return (int(self.horizon) // k) * k


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, d)
    controls: np.ndarray  # (T, m)
    seed: int
    kind: PolicyKind
    noise: np.ndarray | None = None  # (T, d) when recorded


@dataclass
class _Batch:
    sq_norms: np.ndarray  # (n, T+1)
    max_step_norm: np.ndarray  # (n,)
    max_block_norm: np.ndarray  # (n,)
    block_norm_series: np.ndarray  # (n, blocks+1), |x| on the kappa grid
    states: np.ndarray | None = None
    controls: np.ndarray | None = None


def _simulate(exp, kinds, stream_seeds, run_ids=None, record=False):
    """Simulate one batch of runs for each policy kind on shared noise."""
    sys, reach, q = exp.sys, exp.reach, exp.q
    kappa, T, n = reach.kappa, exp.steps, len(stream_seeds)
    W = np.empty((n, T, sys.d))
    for i, s in enumerate(stream_seeds):
        W[i] = sample_block(exp.noise, SeededStream(s), T)
    gain = block_gain(reach)
    A, B = sys.A, sys.B
    out = {}
    for kind in kinds:
        X = np.tile(exp.x0, (n, 1))
        sq = np.empty((n, T + 1))
        sq[:, 0] = _rowsq(X)
        grid = np.empty((n, T // kappa + 1))
        grid[:, 0] = np.sqrt(sq[:, 0])
        max_step = np.zeros(n)
        max_block = np.zeros(n)
        states = controls = None
        if record:
            states = np.empty((n, T + 1, sys.d))
            controls = np.empty((n, T, sys.m))
            states[:, 0] = X
        for b, t0 in enumerate(range(0, T, kappa)):
            U = plan_blocks(kind, reach, q, X, gain)
            max_block = np.maximum(max_block, block_norms(U))
            for j in range(kappa):
                t = t0 + j
                u = U[:, j, :]
                max_step = np.maximum(max_step, _rownorm(u))
                X = _rowdot(X, A) + _rowdot(u, B) + W[:, t, :]
                s2 = _rowsq(X)
                nrm = np.sqrt(s2)
                bad = ~(nrm <= DIVERGENCE_NORM)
                if bad.any():
                    i = int(np.argmax(bad))
                    run = None if run_ids is None else int(run_ids[i])
                    raise DivergedError(t + 1, run, float(nrm[i]))
                sq[:, t + 1] = s2
                if record:
                    states[:, t + 1] = X
                    controls[:, t] = u
            grid[:, b + 1] = nrm
        out[PolicyKind(kind)] = _Batch(sq, max_step, max_block, grid, states, controls)
    return out, W


def rollout(exp, seed=None, record_noise=False):
    """Single closed-loop trajectory; deterministic in ``seed`` (default ``exp.seed``)."""
    seed = exp.seed if seed is None else seed
    res, W = _simulate(exp, [exp.kind], [seed], record=True)
    b = res[exp.kind]
    return Trajectory(
        states=b.states[0],
        controls=b.controls[0],
        seed=seed,
        kind=exp.kind,
        noise=W[0] if record_noise else None,
    )


def replay_residual(sys, traj):
    """Largest deviation of a recorded trajectory from the dynamics."""
    if traj.noise is None:
        raise InvalidArgument("trajectory was recorded without noise draws")
    worst = 0.0
    for t in range(len(traj.controls)):
        pred = step(sys, traj.states[t], traj.controls[t], traj.noise[t])
        worst = max(worst, float(np.max(np.abs(pred - traj.states[t + 1]))))
    return worst


@dataclass
class EnsembleStats:
    kind: PolicyKind
    runs: int
    kappa: int
    mean_sq_norm: np.ndarray
    sq_norm_std: np.ndarray
    max_control_norm: float
    max_block_norm: float
    drift_norms: np.ndarray  # |x_{kappa t}|, pooled run-major
    drift_deltas: np.ndarray  # |x_{kappa (t+1)}| - |x_{kappa t}|
    x0_norm: float = 0.0
    fourth_diff_max: float = field(init=False)

    def __post_init__(self):
        d4 = self.drift_deltas**4
        self.fourth_diff_max = float(d4.max()) if d4.size else 0.0

    @property
    def drift_samples(self):
        return np.column_stack([self.drift_norms, self.drift_deltas])


def _thread_count(threads):
    cap = os.environ.get("QSTAB_THREADS")
    n = threads if threads is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidArgument(f"QSTAB_THREADS must be an integer, got {cap!r}") from None
    return max(1, int(n))


def run_ensemble(exp, runs, kinds, threads=None):
    """Ensemble statistics for each policy in ``kinds`` on shared per-run noise."""
    if int(runs) != runs or runs < 1:
        raise InvalidArgument(f"runs must be a positive integer, got {runs}")
    ids = np.arange(int(runs))
    chunks = [c for c in np.array_split(ids, min(_thread_count(threads), len(ids))) if len(c)]

    def work(chunk):
        seeds = [run_seed(exp.seed, i) for i in chunk]
        return _simulate(exp, kinds, seeds, run_ids=chunk)[0]

    if len(chunks) == 1:
        parts = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(work, chunks))

    out = {}
    for kind in kinds:
        kind = PolicyKind(kind)
        sq = np.concatenate([p[kind].sq_norms for p in parts])
        grid = np.concatenate([p[kind].block_norm_series for p in parts])
        out[kind] = EnsembleStats(
            kind=kind,
            runs=int(runs),
            kappa=exp.reach.kappa,
            mean_sq_norm=sq.mean(axis=0),
            sq_norm_std=sq.std(axis=0, ddof=1) if runs > 1 else np.zeros(sq.shape[1]),
            max_control_norm=float(max(p[kind].max_step_norm.max() for p in parts)),
            max_block_norm=float(max(p[kind].max_block_norm.max() for p in parts)),
            drift_norms=grid[:, :-1].reshape(-1),
            drift_deltas=np.diff(grid, axis=1).reshape(-1),
            x0_norm=float(np.linalg.norm(exp.x0)),
        )
    return out


def ensemble(exp, runs, threads=None):
    """Monte Carlo statistics of ``exp.kind`` over ``runs`` seeded rollouts.

    The output does not depend on ``threads``; the ``QSTAB_THREADS``
    environment variable caps it.
    """
    return run_ensemble(exp, runs, [exp.kind], threads)[exp.kind]


def ensemble_compare(exp, runs, threads=None):
    """Both policies on common random numbers: run i sees the same noise under each."""
    return run_ensemble(exp, runs, [PolicyKind.QUANTIZED, PolicyKind.BASELINE], threads)


@dataclass(frozen=True)
class DriftReport:
    conditional_drift_mean: float
    stderr: float
    n_samples: int
    b_theoretical: float
    fourth_moment_bound_observed: float
    J: float
    sufficient: bool

    @property
    def consistent(self):
        """Observed drift respects the guaranteed decrease within 3 standard errors."""
        return self.sufficient and self.conditional_drift_mean <= -self.b_theoretical + 3 * self.stderr

    def lines(self):
        rows = [
            ("conditional_drift_mean", self.conditional_drift_mean),
            ("stderr", self.stderr),
            ("n_samples", self.n_samples),
            ("b_theoretical", self.b_theoretical),
            ("fourth_moment_bound_observed", self.fourth_moment_bound_observed),
            ("J", self.J),
            ("sufficient", str(self.sufficient).lower()),
            ("consistent", str(self.consistent).lower()),
        ]
        return [f"{k} {v:.17g}" if isinstance(v, float) else f"{k} {v}" for k, v in rows]


def drift_report(stats, r, kappa, sigma_max_RI, c4, phi):
    """Pooled estimate of the one-block drift of ``|x|`` outside the r-ball.

    Samples from all runs and block times with ``|x_{kappa t}| > r`` are
    pooled, so this estimates an average of the conditional drift over the
    visited states rather than the drift at any single state.
    """
    mask = stats.drift_norms > r
    deltas = stats.drift_deltas[mask]
    n = int(deltas.size)
    sufficient = n >= MIN_DRIFT_SAMPLES
    mean = float(deltas.mean()) if n else float("nan")
    se = float(deltas.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return DriftReport(
        conditional_drift_mean=mean,
        stderr=se,
        n_samples=n,
        b_theoretical=drift_witness(r, kappa, sigma_max_RI, c4, phi),
        fourth_moment_bound_observed=stats.fourth_diff_max,
        J=max(stats.x0_norm, float(r)),
        sufficient=sufficient,
    )


@dataclass(frozen=True)
class NoGrowth:
    late_max: float
    mid_max: float
    slope: float
    slope_stderr: float

    @property
    def ratio_ok(self):
        return self.late_max <= 4.0 * self.mid_max

    @property
    def slope_ok(self):
        return self.slope <= 3.0 * self.slope_stderr

    @property
    def passed(self):
        return self.ratio_ok and self.slope_ok


def no_growth(mean_sq_norm):
    """Compare the last half of a mean-square series with the second quarter.

    Over ``t`` in ``[T/2, T]`` the series must stay below four times its
    maximum on ``[T/4, T/2]`` and its least-squares slope must not be
    significantly positive.
    """
    y = np.asarray(mean_sq_norm, dtype=float)
    T = len(y) - 1
    if T < 8:
        raise InvalidArgument("series too short for a growth check")
    late = np.arange(T // 2, T + 1)
    mid = np.arange(T // 4, T // 2 + 1)
    fit = sps.linregress(late, y[late])
    return NoGrowth(float(y[late].max()), float(y[mid].max()), float(fit.slope), float(fit.stderr))
