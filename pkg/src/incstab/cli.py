"""Command-line front end.

Commands: ``check``, ``simulate`` and ``krasovskii``. Reports are canonical
JSON (sorted keys, ``%.12g`` floats, trailing newline); curves are long-form
CSV with header ``t,series_id,value``.

Exit codes: 0 analysis completed (whatever the verdict), 1 verdict failure
with ``--fail-on-verdict``, 2 usage error, 3 input or I/O error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys as _sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .certify import (CertReport, Curve, SamplePlan, demidovich_check, flf_decrease_certify,
                      incremental_rate_estimate, matrix_measure_check, quadratic_decay_rate)
from .flf import (ClassK, FiniteIntegralFlf, FlfDiagnosticError, InfiniteIntegralFlf,
                  QuadraticFlf, choose_delta, flf_sandwich_constants)
from .krasovskii import (PreconditionError, classical_krasovskii_check, commutation_check,
                         krasovskii_verify)
from .lift import TangentPoint, lifted_trajectory
from .metricgeo import MetricError, lipschitz_estimate
from .odeflow import IntegrationError, IntegratorConfig, integrate
from .sysdsl.errors import DslError, EvalDomainError
from .sysdsl.system import SystemDef, parse_system_file

log = logging.getLogger("incstab")

EXIT_OK, EXIT_VERDICT, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3, 4


class InputError(Exception):
    """Bad input file or unwritable output."""


# -- canonical JSON ---------------------------------------------------------------

def _canon(obj) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".12g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(f"{json.dumps(k, ensure_ascii=False)}:{_canon(v)}"
                              for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_canon(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Sorted keys, ``%.12g`` floats, non-finite floats as null, trailing newline."""
    return _canon(obj) + "\n"


def write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        _sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def curves_csv(curves: Sequence[Curve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "series_id", "value"])
    for c in curves:
        for t, v in zip(c.t, c.value):
            w.writerow([format(float(t), ".12g"), c.series_id, format(float(v), ".12g")])
    return buf.getvalue()


def report_json(report: CertReport, run: dict) -> dict:
    out = report.to_dict()
    out["config"] = {"run": run, "analysis": out["config"]}
    out["tool_version"] = __version__
    return out


# -- argument parsing ---------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _alpha(text: str) -> ClassK | None | str:
    if text in ("zero", "auto"):
        return None if text == "zero" else "auto"
    try:
        kind, _, params = text.partition(":")
        vals = [float(a) for a in params.split(",")]
        if kind == "linear" and len(vals) == 1:
            return ClassK.linear(vals[0])
        if kind == "power" and len(vals) == 2:
            return ClassK.power(vals[0], vals[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"bad class-K spec {text!r}; use linear:a, power:a,q or zero")


def _delta(text: str):
    if text == "auto":
        return "auto"
    try:
        d = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"delta must be a number or 'auto', got {text!r}")
    if not d > 0:
        raise argparse.ArgumentTypeError("delta must be positive")
    return d


def _positive_int(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if k <= 0:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return k


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="incstab", description="Incremental stability analysis.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--system", required=True, help="system file")
        p.add_argument("--out", default=None, help="report/trajectory path (default: stdout)")
        p.add_argument("--rtol", type=float, default=1e-8, help="integrator relative tolerance")
        p.add_argument("--atol", type=float, default=1e-10, help="integrator absolute tolerance")
        p.add_argument("--method", choices=["rk45", "rk4"], default="rk45")
        p.add_argument("--max-step", type=float, default=math.inf,
                       help="integrator step cap (the fixed step for rk4)")
        p.add_argument("-v", "--verbose", action="store_true")

    c = sub.add_parser("check", help="certify or estimate incremental stability")
    common(c)
    c.add_argument("--mode", required=True,
                   choices=["demidovich", "flf", "empirical", "matrix-measure"])
    c.add_argument("--rate", type=float, default=0.1, help="claimed rate lambda (default 0.1)")
    c.add_argument("--K", type=float, default=1.0, help="overshoot constant K for FLF constants")
    c.add_argument("--flf", choices=["finite", "quadratic", "infinite"], default="finite",
                   help="FLF kind for --mode flf (default finite integral)")
    c.add_argument("--p", type=float, default=2.0, help="FLF exponent (default 2)")
    c.add_argument("--delta", type=_delta, default=1.0, help="FLF horizon or 'auto'")
    c.add_argument("--horizon", type=float, default=20.0,
                   help="truncation horizon of the infinite integral FLF")
    c.add_argument("--alpha", type=_alpha, default="auto",
                   help="decrease function linear:a | power:a,q | zero | auto (default)")
    c.add_argument("--norm", choices=["one", "two", "inf", "metric"], default="metric",
                   help="norm for --mode matrix-measure (default: system metric)")
    c.add_argument("--samples", type=_positive_int, default=200)
    c.add_argument("--pairs", type=_positive_int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--t0", type=float, default=0.0)
    c.add_argument("--T", type=float, default=10.0,
                   help="time window: sampled times for certificates, horizon for empirical")
    c.add_argument("--tol", type=float, default=None,
                   help="inequality tolerance (default 1e-9; 1e-6 for flf)")
    c.add_argument("--curves", default=None, help="CSV path for distance curves")
    c.add_argument("--fail-on-verdict", action="store_true",
                   help="exit 1 when the verdict is inconclusive")

    s = sub.add_parser("simulate", help="integrate a trajectory (lifted when --v0 is given)")
    common(s)
    s.add_argument("--x0", type=_floats, required=True)
    s.add_argument("--v0", type=_floats, default=None)
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--tf", type=float, required=True)
    s.add_argument("--points", type=int, default=0,
                   help="uniform output points (default: integrator nodes)")

    k = sub.add_parser("krasovskii", help="Krasovskii-type Lyapunov function checks")
    common(k)
    k.add_argument("--h-equals-f", action="store_true", help="use h = f (autonomous f only)")
    k.add_argument("--P", default=None, help="matrix file for P (classical check)")
    k.add_argument("--Q", default=None, help="matrix file for Q (classical check)")
    k.add_argument("--rate", type=float, default=None,
                   help="decay rate k of W (default: sampled rate of the quadratic FLF)")
    k.add_argument("--samples", type=_positive_int, default=20)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--T", type=float, default=10.0, help="trajectory horizon")
    k.add_argument("--tol", type=float, default=1e-9)
    k.add_argument("--fail-on-verdict", action="store_true")
    return ap


def _run_echo(args) -> dict:
    skip = {"out", "curves", "verbose"}
    echo = {}
    for key, val in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(val, ClassK):
            val = val.describe()
        elif isinstance(val, float) and not math.isfinite(val):
            val = str(val)
        echo[key] = val
    return echo


def _cfg(args) -> IntegratorConfig:
    try:
        return IntegratorConfig(args.method, args.rtol, args.atol, args.max_step)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _load_system(path: str) -> SystemDef:
    try:
        return parse_system_file(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except (DslError, MetricError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_matrix(path: str, n: int) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        M = np.array(json.loads(text), dtype=float)
    except (ValueError, TypeError):
        try:
            M = np.loadtxt(io.StringIO(text), dtype=float, ndmin=2)
        except ValueError as exc:
            raise InputError(f"{path}: not a matrix ({exc})") from exc
    M = np.atleast_2d(M)
    if M.shape != (n, n):
        raise InputError(f"{path}: expected a {n}x{n} matrix, got shape {M.shape}")
    return M


# -- commands -------------------------------------------------------------------------

def _flf_spec(args, sys: SystemDef, cfg: IntegratorConfig):
    """FLF spec, report block and default decrease function for ``--mode flf``."""
    if args.flf == "quadratic":
        spec = QuadraticFlf()
        alpha = ClassK.linear(2 * args.rate) if args.alpha == "auto" else args.alpha
        return spec, {"kind": "quadratic", "p": 2.0, "delta": None, "c1": None, "c2": None,
                      "k": None}, alpha
    if args.flf == "infinite":
        spec = InfiniteIntegralFlf(ClassK.power(1.0, args.p), args.horizon)
        alpha = None if args.alpha == "auto" else args.alpha
        return spec, {"kind": "integral-infinite", "p": args.p, "delta": None, "c1": None,
                      "c2": None, "k": None, "horizon": args.horizon}, alpha
    delta = choose_delta(args.K, args.rate, args.p) if args.delta == "auto" else args.delta
    spec = FiniteIntegralFlf(args.p, delta)
    lip = lipschitz_estimate(sys, sample_count=min(args.samples * 5, 1000), seed=args.seed)
    bounds = flf_sandwich_constants(max(lip.value, 1e-12), args.rate, args.K, args.p, delta)
    block = {"kind": "integral-finite", "p": args.p, "delta": delta, "c1": bounds.c1,
             "c2": bounds.c2, "k": bounds.k, "L": lip.value, "L_heuristic": lip.heuristic}
    if args.alpha == "auto":
        alpha = ClassK.linear(bounds.k) if bounds.k_positive else None
    else:
        alpha = args.alpha
    return spec, block, alpha


def cmd_check(args) -> int:
    sys = _load_system(args.system)
    cfg = _cfg(args)
    run = _run_echo(args)
    if args.mode == "empirical":
        plan = SamplePlan(args.seed, 1, t0=args.t0, T=args.T)
        report = incremental_rate_estimate(sys, plan, cfg, n_pairs=max(args.pairs, 10))
    else:
        T = args.T if not sys.is_autonomous else 0.0
        plan = SamplePlan(args.seed, args.samples, t0=args.t0, T=T)
        if args.mode == "demidovich":
            report = demidovich_check(sys, None, args.rate, plan,
                                      tol=1e-9 if args.tol is None else args.tol)
        elif args.mode == "matrix-measure":
            norm = None if args.norm == "metric" else args.norm
            report = matrix_measure_check(sys, plan, norm,
                                          tol=1e-9 if args.tol is None else args.tol)
        else:
            spec, block, alpha = _flf_spec(args, sys, cfg)
            report = flf_decrease_certify(sys, spec, alpha, plan, cfg,
                                          tol=1e-6 if args.tol is None else args.tol)
            report.flf = block
    write_text(args.out, canonical_json(report_json(report, run)))
    if args.curves:
        write_text(args.curves, curves_csv(report.curves))
    if args.fail_on_verdict and report.verdict == "inconclusive":
        return EXIT_VERDICT
    return EXIT_OK


def cmd_simulate(args) -> int:
    sys = _load_system(args.system)
    cfg = _cfg(args)
    if len(args.x0) != sys.n:
        raise InputError(f"--x0 needs {sys.n} values, got {len(args.x0)}")
    if args.tf < args.t0:
        raise InputError("--tf must not be smaller than --t0")
    if args.v0 is not None:
        if len(args.v0) != sys.n:
            raise InputError(f"--v0 needs {sys.n} values, got {len(args.v0)}")
        traj = lifted_trajectory(sys, TangentPoint(args.x0, args.v0), args.t0, args.tf, cfg)
        names = list(sys.state) + [f"v_{s}" for s in sys.state]
    else:
        traj = integrate(sys, args.x0, args.t0, args.tf, cfg)
        names = list(sys.state)
    if args.points > 1:
        ts = np.linspace(args.t0, args.tf, args.points)
        Y = traj(ts)
    else:
        ts, Y = traj.t, traj.y
    curves = [Curve(name, ts, Y[:, j]) for j, name in enumerate(names)]
    write_text(args.out, curves_csv(curves))
    return EXIT_OK


def cmd_krasovskii(args) -> int:
    sys = _load_system(args.system)
    cfg = _cfg(args)
    run = _run_echo(args)
    if args.h_equals_f:
        if not sys.is_autonomous:
            raise InputError("--h-equals-f needs an autonomous system")
        sys = sys.with_h(None)
    elif not sys.has_h and not sys.is_autonomous:
        raise InputError("time-varying systems need an explicit h in the system file")
    plan = SamplePlan(args.seed, args.samples, T=args.T)
    if (args.P is None) != (args.Q is None):
        raise InputError("--P and --Q must be given together")
    if args.P is not None:
        P, Q = _load_matrix(args.P, sys.n), _load_matrix(args.Q, sys.n)
        try:
            report = classical_krasovskii_check(sys, P, Q, plan, cfg, tol=args.tol)
        except MetricError as exc:
            raise InputError(str(exc)) from exc
    else:
        bracket = commutation_check(sys, plan)
        spec = QuadraticFlf()
        k = args.rate if args.rate is not None else quadratic_decay_rate(sys, sys.metric, plan)
        config = {"check": "krasovskii", "k": k, "flf": "quadratic", "plan": plan.describe()}
        if not bracket.commuting:
            report = CertReport("inconclusive", bracket=bracket.to_dict(), config=config,
                                details={"reason": "f and h do not commute"})
        else:
            try:
                chk = krasovskii_verify(sys, spec, k, plan, cfg)
            except PreconditionError as exc:
                raise InputError(str(exc)) from exc
            ok = chk.passed and k > 0
            report = CertReport(("IES" if k > 0.01 else "IS") if ok else "inconclusive",
                                margin=chk.positivity_margin, lam=chk.decay_rate,
                                violations=chk.violations, n_samples=chk.n_trajectories,
                                bracket=bracket.to_dict(), config=config,
                                details={"lyapunov": chk.to_dict()})
    write_text(args.out, canonical_json(report_json(report, run)))
    if args.fail_on_verdict and report.verdict == "inconclusive":
        return EXIT_VERDICT
    return EXIT_OK


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "krasovskii": cmd_krasovskii}


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, EvalDomainError, FlfDiagnosticError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT


def main() -> None:
    _sys.exit(run_command())


if __name__ == "__main__":
    main()
