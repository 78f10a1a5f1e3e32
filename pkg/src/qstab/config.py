"""Flat ``key = value`` experiment configuration.

Example::

    d = 2
    m = 1
    A = [[cos(pi/3), -sin(pi/3)], [sin(pi/3), cos(pi/3)]]
    B = [[1], [0]]
    x0 = [10, 10]
    r = 7
    phi_target = pi/8
    noise = gaussian_isotropic 1
    umax = auto

Numeric values accept arithmetic with ``pi``, ``e``, ``sqrt``, ``sin``, ``cos``,
``tan``. Matrices are bracketed row-major lists. ``#`` starts a comment.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, NotReachableError
from .linalg import LinearSystem
from .noise import NoiseModel, c4_value
from .policy import check_conditions, min_radius, min_umax
from .quantizer import design_bins, import_bins

AUTO = "auto"
R_AUTO_FACTOR = 1.1

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt, "sin": math.sin, "cos": math.cos, "tan": math.tan}


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, (ast.List, ast.Tuple)):
        return [_eval(e) for e in node.elts]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in _FUNCS
        and len(node.args) == 1
        and not node.keywords
    ):
        return _FUNCS[node.func.id](_eval(node.args[0]))
    raise InvalidArgument(f"unsupported expression: {ast.dump(node)}")


def evaluate(text):
    """Evaluate a numeric literal, arithmetic expression or nested list."""
    try:
        return _eval(ast.parse(text.strip(), mode="eval"))
    except SyntaxError as exc:
        raise InvalidArgument(f"cannot parse {text!r}") from exc


def _fmt_list(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt_list(x) for x in v) + "]"
    return repr(float(v))


def _auto_or_number(v):
    return v if v == AUTO else repr(float(v))


@dataclass
class ExperimentConfig:
    A: list
    B: list
    x0: list
    d: int = None
    m: int = None
    r: object = AUTO
    phi_target: float = math.pi / 8
    bins_file: str | None = None
    noise: str = "gaussian_isotropic 1"
    c4: object = AUTO
    policy: str = "quantized"
    runs: int = 1000
    horizon: int = 200
    seed: int = 0
    umax: object = AUTO

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.ndim != 2 or B.ndim != 2:
            raise InvalidArgument("A and B must be matrices")
        self.d = A.shape[0] if self.d is None else int(self.d)
        self.m = B.shape[1] if self.m is None else int(self.m)
        if A.shape != (self.d, self.d):
            raise InvalidArgument(f"A must be {self.d}x{self.d}, got {A.shape}")
        if B.shape != (self.d, self.m):
            raise InvalidArgument(f"B must be {self.d}x{self.m}, got {B.shape}")
        if len(self.x0) != self.d:
            raise InvalidArgument(f"x0 must have {self.d} entries")
        if self.policy not in ("quantized", "baseline", "both"):
            raise InvalidArgument(f"policy must be quantized, baseline or both, got {self.policy!r}")
        for key in ("r", "c4", "umax"):
            v = getattr(self, key)
            if v != AUTO:
                setattr(self, key, float(v))
        self.phi_target = float(self.phi_target)
        self.runs, self.horizon, self.seed = int(self.runs), int(self.horizon), int(self.seed)
        if self.runs < 1:
            raise InvalidArgument(f"runs must be >= 1, got {self.runs}")
        if self.horizon < 1:
            raise InvalidArgument(f"horizon must be >= 1, got {self.horizon}")
        self.A, self.B = A.tolist(), B.tolist()
        self.x0 = [float(v) for v in self.x0]

    def dumps(self):
        lines = [
            f"d = {self.d}",
            f"m = {self.m}",
            f"A = {_fmt_list(self.A)}",
            f"B = {_fmt_list(self.B)}",
            f"x0 = {_fmt_list(self.x0)}",
            f"r = {_auto_or_number(self.r)}",
            f"phi_target = {self.phi_target!r}",
        ]
        if self.bins_file:
            lines.append(f"bins_file = {self.bins_file}")
        lines += [
            f"noise = {self.noise}",
            f"c4 = {_auto_or_number(self.c4)}",
            f"policy = {self.policy}",
            f"runs = {self.runs}",
            f"horizon = {self.horizon}",
            f"seed = {self.seed}",
            f"umax = {_auto_or_number(self.umax)}",
        ]
        return "\n".join(lines) + "\n"


_NUMERIC = {"A", "B", "x0", "phi_target"}
_INTEGER = {"d", "m", "runs", "horizon", "seed"}
_AUTO_OK = {"r", "c4", "umax"}
_TEXT = {"bins_file", "noise", "policy"}


def loads(text):
    """Parse configuration text into an :class:`ExperimentConfig`."""
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in kw:
            raise InvalidArgument(f"line {lineno}: duplicate key {key!r}")
        if key in _NUMERIC:
            kw[key] = evaluate(val)
        elif key in _INTEGER:
            v = evaluate(val)
            if v != int(v):
                raise InvalidArgument(f"line {lineno}: {key} must be an integer")
            kw[key] = int(v)
        elif key in _AUTO_OK:
            kw[key] = AUTO if val == AUTO else evaluate(val)
        elif key in _TEXT:
            kw[key] = val or None
        else:
            raise InvalidArgument(f"line {lineno}: unknown key {key!r}")
    for key in ("A", "B", "x0"):
        if key not in kw:
            raise InvalidArgument(f"missing required key {key!r}")
    return ExperimentConfig(**kw)


def load(path):
    with open(path) as fh:
        return loads(fh.read())


def parse_noise(spec, d):
    parts = spec.split(None, 1)
    if not parts:
        raise InvalidArgument("empty noise specification")
    kind, arg = parts[0], (parts[1] if len(parts) > 1 else "")
    if kind in ("zero", "none"):
        return NoiseModel.zero(d)
    if kind in ("gaussian_isotropic", "gaussian_diag", "uniform_ball"):
        if not arg:
            raise InvalidArgument(f"noise kind {kind} needs a parameter")
        return NoiseModel(kind, d, evaluate(arg))
    if kind == "user_table":
        try:
            table = np.loadtxt(arg.strip(), ndmin=2)
        except OSError as exc:
            raise InvalidArgument(f"cannot read noise table: {exc}") from exc
        return NoiseModel(kind, d, table)
    raise InvalidArgument(f"unknown noise kind {kind!r}")


@dataclass
class Resolved:
    """A configuration with every ``auto`` replaced by its value."""

    config: ExperimentConfig
    sys: LinearSystem
    q: object
    noise: NoiseModel
    c4: float
    umax: float
    reach: object = None
    notes: list = field(default_factory=list)

    @property
    def r(self):
        return self.q.r

    def report(self):
        return check_conditions(self.sys, self.reach, self.q, self.c4, self.umax)

    def to_config(self):
        """Config with all resolved values written out explicitly."""
        return replace(self.config, r=self.q.r, c4=self.c4, umax=self.umax)


def resolve(cfg):
    sys = LinearSystem(cfg.A, cfg.B)
    noise = parse_noise(cfg.noise, cfg.d)
    c4 = c4_value(noise, seed=cfg.seed) if cfg.c4 == AUTO else float(cfg.c4)
    try:
        reach = sys.reach
    except NotReachableError:
        reach = None
    notes = []

    if cfg.bins_file:
        q = import_bins(cfg.bins_file)
        if q.d != cfg.d:
            raise InvalidArgument(f"bins file has dimension {q.d}, system has {cfg.d}")
    else:
        q = design_bins(cfg.d, 1.0, cfg.phi_target, seed=cfg.seed)

    if cfg.r != AUTO:
        q = q.with_radius(cfg.r)
    elif cfg.bins_file:
        pass  # radius comes from the file
    elif reach is not None and q.phi < math.pi / 4:
        r_min = min_radius(reach.kappa, reach.sigma_max_RI, c4, q.phi)
        if r_min > 0:
            q = q.with_radius(R_AUTO_FACTOR * r_min)
        else:
            notes.append("r=auto: minimal radius is zero, keeping r = 1")
    else:
        notes.append("r=auto unresolvable (unreachable pair or phi >= pi/4), using r = 1")

    if cfg.umax != AUTO:
        umax = float(cfg.umax)
    elif reach is not None:
        umax = min_umax(q.r, reach.sigma_min)
    else:
        umax = float("inf")
        notes.append("umax=auto unresolvable for an unreachable pair")
    return Resolved(cfg, sys, q, noise, c4, umax, reach, notes)


def reference_config(**overrides):
    """The rotation-by-pi/3 experiment: 1000 runs from x0 = (10, 10)."""
    c, s = math.cos(math.pi / 3), math.sin(math.pi / 3)
    kw = dict(
        A=[[c, -s], [s, c]],
        B=[[1.0], [0.0]],
        x0=[10.0, 10.0],
        r=7.0,
        phi_target=math.pi / 8,
        noise="gaussian_isotropic 1",
        c4=AUTO,
        policy="both",
        runs=1000,
        horizon=200,
        seed=42,
        umax=10.0,
    )
    kw.update(overrides)
    return ExperimentConfig(**kw)
