"""Noise models for the additive disturbance, seeded streams, fourth moments.

Every model consumes a fixed number of standard normal variates per draw
(``d`` for Gaussians, ``d + 1`` for the ball and table models). A block of
``n`` draws is therefore the same as ``n`` single draws taken in sequence,
and the ``counter``-th draw of a stream depends only on ``(seed, counter)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import InvalidArgument

MASK64 = (1 << 64) - 1


def splitmix64(x):
    """SplitMix64 finalizer, a bijection on 64-bit integers."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def run_seed(seed, run):
    """Per-run substream seed: mix(seed XOR run)."""
    return splitmix64((int(seed) ^ int(run)) & MASK64)


@dataclass
class SeededStream:
    """PCG64 stream; ``counter`` counts the draws taken so far."""

    seed: int
    counter: int = field(default=0, init=False)
    _gen: np.random.Generator = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.seed = int(self.seed) & MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normals(self, shape):
        return self._gen.standard_normal(shape)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean i.i.d. disturbance model.

    ``kind`` is one of ``gaussian_isotropic`` (``param`` = sigma),
    ``gaussian_diag`` (``param`` = per-coordinate variances),
    ``uniform_ball`` (``param`` = radius) or ``user_table`` (``param`` = an
    (n, d) array of samples, drawn uniformly with replacement after centering).
    """

    kind: str
    dimension: int
    param: object = 1.0

    def __post_init__(self):
        d = int(self.dimension)
        if d < 1:
            raise InvalidArgument(f"noise dimension must be >= 1, got {self.dimension}")
        object.__setattr__(self, "dimension", d)
        if self.kind in ("gaussian_isotropic", "uniform_ball"):
            p = float(self.param)
            if not (p >= 0 and math.isfinite(p)):
                raise InvalidArgument(f"{self.kind} parameter must be finite and >= 0")
            object.__setattr__(self, "param", p)
        elif self.kind == "gaussian_diag":
            v = np.array(self.param, dtype=float).reshape(-1)
            if v.shape != (d,) or np.any(v < 0) or not np.all(np.isfinite(v)):
                raise InvalidArgument(f"gaussian_diag needs {d} nonnegative variances")
            v.setflags(write=False)
            object.__setattr__(self, "param", v)
        elif self.kind == "user_table":
            T = np.array(self.param, dtype=float)
            if T.ndim == 1:
                T = T.reshape(-1, 1)
            if T.ndim != 2 or T.shape[1] != d or T.shape[0] < 1 or not np.all(np.isfinite(T)):
                raise InvalidArgument(f"user_table needs a finite (n, {d}) sample array")
            T = T - T.mean(axis=0)
            T.setflags(write=False)
            object.__setattr__(self, "param", T)
        else:
            raise InvalidArgument(f"unknown noise kind {self.kind!r}")

    @classmethod
    def zero(cls, d):
        return cls("gaussian_isotropic", d, 0.0)

    @property
    def normals_per_draw(self):
        return self.dimension if self.kind.startswith("gaussian") else self.dimension + 1

    def describe(self):
        if self.kind in ("gaussian_isotropic", "uniform_ball"):
            return f"{self.kind} {self.param!r}"
        if self.kind == "gaussian_diag":
            return f"gaussian_diag [{', '.join(repr(float(v)) for v in self.param)}]"
        return f"user_table <{self.param.shape[0]} rows>"

    def from_normals(self, G):
        """Map an (n, normals_per_draw) block of standard normals to draws."""
        d = self.dimension
        if self.kind == "gaussian_isotropic":
            return self.param * G
        if self.kind == "gaussian_diag":
            return G * np.sqrt(self.param)[None, :]
        U = ndtr(G[:, d])
        if self.kind == "uniform_ball":
            Z = G[:, :d]
            n = np.linalg.norm(Z, axis=1, keepdims=True)
            n[n == 0] = 1.0
            return self.param * (U ** (1.0 / d))[:, None] * Z / n
        idx = np.minimum((U * len(self.param)).astype(int), len(self.param) - 1)
        return self.param[idx]


def sample_block(model, stream, n):
    """``n`` successive draws as an (n, d) array; advances the stream."""
    G = stream.normals((n, model.normals_per_draw))
    stream.counter += n
    return model.from_normals(G)


def sample(model, stream):
    return sample_block(model, stream, 1)[0]


def c4_analytic(model):
    """``E|w|^4`` in closed form, or None when the model has none."""
    d = model.dimension
    if model.kind == "gaussian_isotropic":
        return model.param**4 * d * (d + 2)
    if model.kind == "gaussian_diag":
        v = model.param
        return float(2.0 * np.sum(v**2) + np.sum(v) ** 2)
    if model.kind == "uniform_ball":
        return model.param**4 * d / (d + 4)
    return None


def c4_empirical(model, n, stream):
    """Sample mean of ``|w|^4`` over ``n`` fresh draws, with its standard error."""
    if n < 1000:
        raise InvalidArgument(f"need at least 1000 draws, got {n}")
    W = sample_block(model, stream, n)
    f = np.sum(W * W, axis=1) ** 2
    return float(f.mean()), float(f.std(ddof=1) / math.sqrt(n))


def c4_value(model, n=1_000_000, seed=0):
    """Analytic fourth moment if known, else an empirical estimate."""
    c4 = c4_analytic(model)
    if c4 is not None:
        return float(c4)
    if model.kind == "user_table":
        # exact for uniform resampling from the centered table
        return float(np.mean(np.sum(model.param**2, axis=1) ** 2))
    return c4_empirical(model, n, SeededStream(seed))[0]
