"""Command-line front end.

Every command reads a mechanism (``--mech FILE`` or ``--mech stable:SIGMA,ALPHA``)
and writes one artifact to ``--out`` (atomically) or to standard output.
Flags are range-checked before any computation starts.  Exit status: 0 success, 1 invalid input (error JSON on
standard error), 2 a verification that did not pass.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import io
from .cumulant import (
    DEFAULT_RTOL,
    conservativeness_verdict,
    minimal_solution_at_zero,
    nonuniqueness_residual,
    solve_cumulant,
)
from .errors import CBError, ConfigError, InvalidMechanismError
from .mechanism import eval_mechanism, stable_mechanism
from .simulator import SimConfig, simulate_ensemble
from .verify import (
    DEFAULT_K,
    TestFunction,
    branching_property_check,
    dynkin_residual,
    generator_report,
    martingale_residual,
    mean_and_se,
    monte_carlo_laplace,
    semigroup_report,
)

PROG = "cbprocess"
EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2
POLICY = {"drift": "drift-only", "gauss": "gaussian-correction"}
NONUNIQUE_RS = (0.0, 0.5, 1.0, 2.0, math.inf)
NONUNIQUE_TOL = 1e-9
_SIM = SimConfig()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        unknown = "invalid choice" in message and ("COMMAND" in message or "CHECK" in message)
        rule = "unknown command" if unknown else "usage"
        raise _UsageError(message, rule)


class _RootParser(_Parser):
    """Top-level parser whose help also lists the flags of every command."""

    commands: list = []

    def format_help(self):
        parts = [super().format_help()]
        for name, sub in self.commands:
            parts.append(f"\n{'=' * 8} {PROG} {name} {'=' * 8}\n{sub.format_help()}")
        return "".join(parts)


class _UsageError(ConfigError):
    def __init__(self, message, rule):
        super().__init__(message)
        self.rule = rule


# flag builders -----------------------------------------------------------

def _mech(p, required=True):
    p.add_argument("--mech", metavar="FILE|stable:SIGMA,ALPHA", required=required,
                   help="mechanism JSON file or stable shorthand")


def _out(p, formats=("csv", "json"), default="json"):
    p.add_argument("--out", metavar="PATH", help="output file (default: standard output)")
    p.add_argument("--format", choices=formats, default=default,
                   help="artifact format (default: %(default)s)")


def _lam(p, default="-1"):
    p.add_argument("--lambda", dest="lam", metavar="a+bi[,a+bi...]", default=default,
                   help="point of the closed left half-plane; one value is broadcast "
                        "(default: %(default)s)")


def _x0(p, default="1"):
    p.add_argument("--x0", metavar="r[,r...]", default=default,
                   help="initial state; one value is broadcast (default: %(default)s)")


def _real(p, flag, default, text):
    p.add_argument(flag, type=float, default=default, metavar="REAL",
                   help=f"{text} (default: %(default)s)")


def _grid(p, default=50):
    p.add_argument("--grid", type=int, default=default, metavar="INT",
                   help="number of equal output intervals (default: %(default)s)")


def _rtol(p):
    p.add_argument("--rel-tol", type=float, default=DEFAULT_RTOL, metavar="REAL",
                   help="ODE relative tolerance (default: %(default)s)")


def _sim(p, paths=10000):
    p.add_argument("--paths", type=int, default=paths, metavar="INT",
                   help="number of simulated paths (default: %(default)s)")
    p.add_argument("--seed", type=int, default=_SIM.master_seed, metavar="UINT64",
                   help="master seed (default: %(default)s)")
    _real(p, "--dt", _SIM.dt, "Euler step")
    _real(p, "--eps", _SIM.eps, "small-jump cutoff")
    _real(p, "--truncate", _SIM.truncation_n, "large-jump cap and explosion level")
    p.add_argument("--policy", choices=tuple(POLICY), default="drift",
                   help="small-jump policy: compensator drift only, or drift plus a "
                        "matching Gaussian (default: %(default)s)")


def _k(p):
    p.add_argument("-k", type=float, default=DEFAULT_K, metavar="REAL",
                   help="pass band in standard errors (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _RootParser(prog=PROG, description="Continuous-state branching processes: "
                     "cumulant flows and their Monte Carlo cross-checks.",
                     epilog="CB_THREADS caps simulation worker threads (0 = auto).",
                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", help="check mechanism admissibility")
    p.add_argument("file", nargs="?", metavar="FILE", help="mechanism JSON file")
    _mech(p, required=False)
    _out(p, ("json",))

    p = sub.add_parser("eval-h", help="evaluate the branching mechanism H(lambda)")
    _mech(p)
    _lam(p)
    _out(p)

    p = sub.add_parser("solve-k", help="integrate the backward equation for K(t, lambda)")
    _mech(p)
    _lam(p)
    _real(p, "--T", 1.0, "horizon")
    _grid(p)
    _rtol(p)
    _out(p, default="csv")

    p = sub.add_parser("minimal-zero", help="minimal solution K(t, 0)")
    _mech(p)
    _real(p, "--T", 1.0, "horizon")
    _grid(p)
    _rtol(p)
    _out(p, default="csv")

    p = sub.add_parser("conservative", help="conservativeness verdict")
    _mech(p)
    _real(p, "--T", 1.0, "horizon")
    _grid(p)
    _out(p, ("json",))

    p = sub.add_parser("simulate", help="simulate paths of the process")
    _mech(p)
    _x0(p)
    _real(p, "--T", 1.0, "horizon")
    _grid(p)
    _sim(p, paths=1)
    _out(p, default="csv")
    p.epilog = "csv writes the path CSV of path 0 (requires --paths 1); json writes " \
               "the ensemble summary."

    p = sub.add_parser("verify", help="cross-check simulation against the cumulant flow")
    checks = p.add_subparsers(dest="check", metavar="CHECK", parser_class=_Parser)
    checks.required = True

    c = checks.add_parser("laplace", help="E exp<lambda, xi(t)> against exp<x0, K(t, lambda)>")
    _mech(c)
    _x0(c)
    _real(c, "--t", 1.0, "time")
    _lam(c)
    _sim(c)
    _k(c)
    _out(c, ("json",))

    c = checks.add_parser("martingale", help="flatness of E exp<K(u-t, lambda), xi(t)>")
    _mech(c)
    _x0(c)
    _real(c, "--u", 1.0, "terminal time")
    _lam(c)
    c.add_argument("--checkpoints", metavar="r[,r...]",
                   help="times in [0, u] (default: 0, u/2, u)")
    _sim(c)
    _k(c)
    _out(c, ("json",))

    c = checks.add_parser("dynkin", help="Dynkin residual of an exponential test function")
    _mech(c)
    _x0(c)
    _real(c, "--u", 1.0, "terminal time")
    _lam(c)
    c.add_argument("--checkpoints", metavar="r[,r...]",
                   help="times in [0, u] (default: 0, u/2, u)")
    c.add_argument("--test-function", choices=("time-exponential", "exponential"),
                   default="time-exponential", help="(default: %(default)s)")
    _sim(c)
    _k(c)
    _out(c, ("json",))

    c = checks.add_parser("semigroup", help="K(s+t) against K(s, K(t))")
    _mech(c)
    _lam(c)
    _real(c, "--s", 0.5, "first time")
    _real(c, "--t", 0.5, "second time")
    _out(c, ("json",))

    c = checks.add_parser("branching", help="x + y convolution property")
    _mech(c)
    _x0(c, "0.5")
    c.add_argument("--y", metavar="r[,r...]", default="0.5",
                   help="second initial state (default: %(default)s)")
    _real(c, "--t", 1.0, "time")
    _lam(c)
    _sim(c)
    _k(c)
    _out(c, ("json",))

    c = checks.add_parser("generator", help="generator quadrature against its closed form")
    _mech(c)
    _lam(c)
    _x0(c)
    _out(c, ("json",))

    p = sub.add_parser("demo-nonuniqueness",
                       help="residuals of the K^r(t, 0) family of the half-stable mechanism")
    _real(p, "--T", 3.0, "horizon")
    _grid(p, 200)
    _out(p, ("json",))

    parser.commands = []
    for name, cmd in sub.choices.items():
        if name == "verify":
            parser.commands += [(f"verify {n}", c) for n, c in checks.choices.items()]
        else:
            parser.commands.append((name, cmd))
    return parser


# helpers -----------------------------------------------------------------

def _finite(obj):
    """JSON-safe copy: non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def _json(obj) -> str:
    return json.dumps(_finite(obj), sort_keys=True) + "\n"


def _cpair(v):
    return [[float(c.real), float(c.imag)] for c in np.atleast_1d(v)]


def _check_ranges(args):
    def positive(name, value):
        if not (value > 0 and math.isfinite(value)):
            raise ConfigError(f"--{name} must be positive and finite, got {value}")

    for name in ("T", "u", "dt", "truncate", "k"):
        if getattr(args, name, None) is not None:
            positive(name, getattr(args, name))
    for name in ("t", "s"):
        value = getattr(args, name, None)
        if value is not None and not (value >= 0 and math.isfinite(value)):
            raise ConfigError(f"--{name} must be nonnegative and finite, got {value}")
    if getattr(args, "eps", None) is not None and not 0 < args.eps <= 1:
        raise ConfigError(f"--eps must lie in (0, 1], got {args.eps}")
    if getattr(args, "grid", None) is not None and args.grid < 1:
        raise ConfigError(f"--grid must be at least 1, got {args.grid}")
    if getattr(args, "paths", None) is not None and args.paths < 1:
        raise ConfigError(f"--paths must be at least 1, got {args.paths}")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
    if getattr(args, "rel_tol", None) is not None and not 0 < args.rel_tol < 1:
        raise ConfigError(f"--rel-tol must lie in (0, 1), got {args.rel_tol}")


def _config(args, **extra) -> SimConfig:
    return SimConfig(dt=args.dt, eps=args.eps, truncation_n=args.truncate,
                     small_jump_policy=POLICY[args.policy], master_seed=args.seed, **extra)


def _checkpoints(args):
    if args.checkpoints is None:
        return [0.0, args.u / 2, args.u]
    return io.parse_real_list(args.checkpoints)


def _emit(args, text: str):
    if args.out:
        io.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _flow_artifact(args, times, values, extra):
    if args.format == "csv":
        return io.flow_csv(times, values)
    return _json({"t": list(map(float, times)), "K": [_cpair(v) for v in values], **extra})


def _reports_artifact(reports):
    return _json({"pass": all(r.passed for r in reports),
                  "reports": [r.to_dict() for r in reports]})


# commands ----------------------------------------------------------------

def _cmd_validate(args):
    source = args.mech or args.file
    if source is None:
        raise ConfigError("validate needs a mechanism FILE or --mech")
    mech = io.load_mechanism(source)
    report = mech.validation
    _emit(args, _json(report.to_dict()))
    mech.check()
    return EXIT_OK


def _cmd_eval_h(args, mech):
    lam = io.parse_complex_list(args.lam)
    h = eval_mechanism(mech, lam if len(lam) > 1 else lam * mech.m)
    if args.format == "csv":
        header = ",".join(f"{p}_H{j}" for j in range(1, mech.m + 1) for p in ("Re", "Im"))
        cells = ",".join(io._g(x) for v in h for x in (v.real, v.imag))
        return header + "\n" + cells + "\n"
    return _json({"lambda": _cpair(lam), "H": _cpair(h)})


def _cmd_solve_k(args, mech):
    lam = io.parse_complex_list(args.lam)
    flow = solve_cumulant(mech, lam if len(lam) > 1 else lam * mech.m, args.T,
                          rel_tol=args.rel_tol, grid=args.grid)
    stats = flow.solver_stats
    return _flow_artifact(args, flow.times, flow.values, {
        "lambda": _cpair(flow.lambda0),
        "solver": {"steps": stats.steps, "rejected": stats.rejected}})


def _cmd_minimal_zero(args, mech):
    res = minimal_solution_at_zero(mech, args.T, grid=args.grid, rel_tol=args.rel_tol)
    return _flow_artifact(args, res.times, res.values,
                          {"converged": res.converged, "gap": res.gap, "k": res.k})


def _cmd_conservative(args, mech):
    return _json(conservativeness_verdict(mech, args.T, grid=args.grid).to_dict())


def _cmd_simulate(args, mech):
    x0 = io.parse_real_list(args.x0)
    grid = tuple(args.T * i / args.grid for i in range(1, args.grid + 1))
    if args.format == "csv":
        if args.paths != 1:
            raise ConfigError("--format csv writes a single path; use --paths 1 or json")
        ens = simulate_ensemble(mech, x0, args.T, _config(args, record_grid=grid), 1)
        return io.path_csv(ens.times, ens.states[0], ens.alive[0])
    cfg = _config(args, record_grid=(args.T,))
    ens = simulate_ensemble(mech, x0, args.T, cfg, args.paths)
    alive = ens.alive[:, -1]
    surv, surv_se = mean_and_se(alive.astype(float))
    means = []
    for j in range(mech.m):
        col = np.where(alive, ens.states[:, -1, j], 0.0)
        mu, se = mean_and_se(col)
        means.append({"mean": mu.real, "std_error": se})
    hits = {f"{lv:g}": float(np.mean(np.isfinite(ens.level_hits[:, i])))
            for i, lv in enumerate(ens.levels)}
    return _json({"paths": args.paths, "dt": cfg.dt, "eps": cfg.eps,
                  "truncation_n": cfg.truncation_n, "seed": cfg.master_seed,
                  "policy": cfg.small_jump_policy, "T": args.T, "x0": list(map(float, x0)),
                  "estimates": {"survival": {"mean": surv.real, "std_error": surv_se},
                                "state_on_survival": means,
                                "level_hit_fraction": hits}})


def _verify(args, mech):
    lam = None
    if getattr(args, "lam", None) is not None:
        lam = io.parse_complex_list(args.lam)
        lam = lam if len(lam) > 1 else lam * mech.m
    check = args.check
    if check == "laplace":
        reports = [monte_carlo_laplace(mech, io.parse_real_list(args.x0), args.t, lam,
                                       args.paths, _config(args), args.k)]
    elif check == "martingale":
        reports = martingale_residual(mech, io.parse_real_list(args.x0), lam, args.u,
                                      _checkpoints(args), args.paths, _config(args), args.k)
    elif check == "dynkin":
        if args.test_function == "exponential":
            f = TestFunction.exponential(mech, lam)
        else:
            f = TestFunction.time_exponential(mech, lam, args.u, args.dt)
        reports = dynkin_residual(mech, io.parse_real_list(args.x0), f, args.u,
                                  _checkpoints(args), args.paths, _config(args), args.k)
    elif check == "semigroup":
        reports = [semigroup_report(mech, lam, args.s, args.t)]
    elif check == "branching":
        reports = [branching_property_check(mech, io.parse_real_list(args.x0),
                                            io.parse_real_list(args.y), args.t, lam,
                                            args.paths, _config(args), args.k)]
    else:
        reports = [generator_report(mech, lam, io.parse_real_list(args.x0))]
    text = reports[0].to_json() + "\n" if len(reports) == 1 else _reports_artifact(reports)
    return text, all(r.passed for r in reports)


def _cmd_nonuniqueness(args):
    mech = stable_mechanism(2.0, 0.5)
    residuals = {("inf" if math.isinf(r) else f"{r:g}"): nonuniqueness_residual(
        r, args.T, mech, n_grid=args.grid) for r in NONUNIQUE_RS}
    minimal = minimal_solution_at_zero(mech, args.T, grid=args.grid)
    k0 = np.array([-(t ** 2) for t in minimal.times])
    ok = max(residuals.values()) <= NONUNIQUE_TOL
    return _json({"T": args.T, "tolerance": NONUNIQUE_TOL, "residuals": residuals,
                  "minimal_vs_r0": float(np.max(np.abs(minimal.values[:, 0] - k0))),
                  "pass": ok}), ok


COMMANDS = {"eval-h": _cmd_eval_h, "solve-k": _cmd_solve_k, "minimal-zero": _cmd_minimal_zero,
            "conservative": _cmd_conservative, "simulate": _cmd_simulate}


def run(argv=None) -> int:
    """Parse ``argv``, execute, and return the process exit status."""
    try:
        args = build_parser().parse_args(argv)
        _check_ranges(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "demo-nonuniqueness":
            text, ok = _cmd_nonuniqueness(args)
            _emit(args, text)
            return EXIT_OK if ok else EXIT_FAILED
        mech = io.load_mechanism(args.mech).check()
        if args.command == "verify":
            text, ok = _verify(args, mech)
            _emit(args, text)
            return EXIT_OK if ok else EXIT_FAILED
        _emit(args, COMMANDS[args.command](args, mech))
        return EXIT_OK
    except CBError as exc:
        sys.stderr.write(_json(exc.to_dict()))
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except OSError as exc:
        sys.stderr.write(_json({"error": type(exc).__name__, "rule": "io",
                                "message": str(exc)}))
        return EXIT_INVALID


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
