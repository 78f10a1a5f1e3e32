"""Command-line front end.

Subcommands ``design``, ``check``, ``simulate`` and ``compare``. Without
``--config`` the built-in reference experiment is used.

Exit codes: 0 success, 1 failed condition check, 2 usage or parse error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys

from . import config as cfgmod
from .errors import DesignFailure, DivergedError, InvalidArgument, NumericalFailure, QstabError
from .policy import PolicyKind, control_alphabet_size
from .quantizer import export_bins
from .simulator import Experiment, drift_report, ensemble_compare, no_growth, run_ensemble

log = logging.getLogger("qstab")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _g(x):
    return f"{x:.17g}"


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _load(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.reference_config()
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.runs is not None:
        if args.runs < 1:
            raise InvalidArgument(f"--runs must be >= 1, got {args.runs}")
        cfg.runs = int(args.runs)
    res = cfgmod.resolve(cfg)
    for note in res.notes:
        log.warning(note)
    return res


def cmd_design(args):
    res = _load(args)
    q = res.q
    kappa = res.reach.kappa if res.reach is not None else None
    summary = [
        f"bins {q.n_bins}",
        f"phi {_g(q.phi)}",
        f"certified {str(q.certified).lower()}",
        f"r {_g(q.r)}",
        f"kappa {kappa if kappa is not None else 'unreachable'}",
        "control_alphabet "
        + (str(control_alphabet_size(kappa, q)) if kappa is not None else "unknown"),
    ]
    if args.out:
        export_bins(q, args.out)
        print("\n".join(summary))
    else:
        print("\n".join("# " + s for s in summary))
        lines = [f"{q.d} {q.r!r}"] + [" ".join(_g(c) for c in u) for u in q.directions]
        print("\n".join(lines))
    return EXIT_OK


def cmd_check(args):
    res = _load(args)
    rep = res.report()
    with _output(args.out) as fh:
        for line in rep.lines():
            fh.write(line + "\n")
    extra = [
        f"kappa {rep.kappa}",
        f"r_min {_g(rep.r_min)}",
        f"umax_min {_g(rep.umax_min)}",
        f"c4 {_g(rep.c4)}",
        f"b_theoretical {_g(rep.b_theoretical)}",
        f"phi_certified {str(rep.phi_certified).lower()}",
    ]
    print("\n".join("# " + s for s in extra), file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_CHECK


def _experiment(res, kind=PolicyKind.QUANTIZED):
    c = res.config
    return Experiment(res.sys, res.q, res.noise, c.x0, c.horizon, c.seed, kind)


def _gate(res, args):
    rep = res.report()
    if rep.passed:
        return True
    failed = ", ".join(c.name for c in rep.checks if not c.passed)
    if args.force:
        log.warning("conditions not met (%s); simulating anyway (--force)", failed)
        return True
    print(f"conditions not met: {failed}; use --force to simulate anyway", file=sys.stderr)
    return False


def _write_report(path, res, stats_by_kind):
    if not path:
        return
    reach, q = res.reach, res.q
    with open(path, "w") as fh:
        for kind, st in stats_by_kind.items():
            dr = drift_report(st, q.r, reach.kappa, reach.sigma_max_RI, res.c4, q.phi)
            ng = no_growth(st.mean_sq_norm)
            fh.write(f"[{kind.value}]\n")
            fh.write("\n".join(dr.lines()) + "\n")
            fh.write(f"max_control_norm {_g(st.max_control_norm)}\n")
            fh.write(f"max_block_norm {_g(st.max_block_norm)}\n")
            fh.write(f"no_growth_late_max {_g(ng.late_max)}\n")
            fh.write(f"no_growth_mid_max {_g(ng.mid_max)}\n")
            fh.write(f"no_growth_slope {_g(ng.slope)}\n")
            fh.write(f"no_growth_slope_stderr {_g(ng.slope_stderr)}\n")
            fh.write(f"no_growth_pass {str(ng.passed).lower()}\n")


def cmd_simulate(args):
    res = _load(args)
    if res.reach is None:
        print("system is not reachable; nothing to simulate", file=sys.stderr)
        return EXIT_CHECK
    if not _gate(res, args):
        return EXIT_CHECK
    c = res.config
    kinds = [PolicyKind.QUANTIZED, PolicyKind.BASELINE] if c.policy == "both" else [PolicyKind(c.policy)]
    stats = run_ensemble(_experiment(res), c.runs, kinds, None)
    with _output(args.out) as fh:
        if len(kinds) == 1:
            fh.write("t,mean_sq_norm\n")
            for t, v in enumerate(stats[kinds[0]].mean_sq_norm):
                fh.write(f"{t},{_g(v)}\n")
        else:
            fh.write("t,mean_sq_norm,policy\n")
            for kind in kinds:
                for t, v in enumerate(stats[kind].mean_sq_norm):
                    fh.write(f"{t},{_g(v)},{kind.value}\n")
    _write_report(args.report, res, stats)
    return EXIT_OK


def cmd_compare(args):
    res = _load(args)
    if res.reach is None:
        print("system is not reachable; nothing to simulate", file=sys.stderr)
        return EXIT_CHECK
    if not _gate(res, args):
        return EXIT_CHECK
    stats = ensemble_compare(_experiment(res), res.config.runs)
    qs = stats[PolicyKind.QUANTIZED].mean_sq_norm
    bs = stats[PolicyKind.BASELINE].mean_sq_norm
    with _output(args.out) as fh:
        fh.write("t,msn_quantized,msn_baseline\n")
        for t, (a, b) in enumerate(zip(qs, bs)):
            fh.write(f"{t},{_g(a)},{_g(b)}\n")
    _write_report(args.report, res, stats)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="qstab",
        description="Finite-alphabet quantized stabilization of stochastic linear systems.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    specs = [
        ("design", cmd_design, "build the radial quantizer and export its bins"),
        ("check", cmd_check, "evaluate every stabilization condition"),
        ("simulate", cmd_simulate, "Monte Carlo mean-square norm as CSV"),
        ("compare", cmd_compare, "both policies on common random numbers as CSV"),
    ]
    for name, fn, help_ in specs:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="experiment config (default: built-in reference)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--out", help="output path (default: stdout)")
        if name in ("simulate", "compare"):
            sp.add_argument("--force", action="store_true", help="simulate even if checks fail")
            sp.add_argument("--report", help="write drift and no-growth diagnostics here")
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, DivergedError, DesignFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
