"""Command line entry point ``vfc``.

Every command reads one scenario (a path, or the name of a shipped scenario),
prints a JSON report to stdout and optionally writes it to ``--report``.
Exit codes: 0 pass, 1 a check failed, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import VFCError
from .forms import constant_form
from .kcat import is_complete, is_proper
from .scenario import load
from .suites import PARTITION_A, PARTITION_B, SUITES, run_suites
from .tropical import fraction_str, tropical_complete_polytope
from .vclass import virtual_dimension
from .vint import PushforwardConfig, integrate_vclass, pushforward

REPORT_SCHEMA = "vfc-report/1"
COMMANDS = ("complete-polytope", "validate", "vclass", "integrate", "pushforward", "check")
EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


def _need_category(sc):
    if sc.ctx is None:
        raise VFCError("SCHEMA", "scenario declares no charts or fixture")
    return sc.ctx


def _integrand(sc, ctx):
    name = sc.integrand or "one"
    if name != "one":
        return name, ctx.forms[name]
    if virtual_dimension(ctx.K) != 0:
        raise VFCError("DEGREE_MISMATCH", "the constant 1 only integrates over a zero dimensional class; "
                       "name an integrand")
    return name, constant_form(ctx.chart_dim)


def _ratio(x) -> str:
    return f"{x.numerator}/{x.denominator}"


def cmd_complete_polytope(sc, args) -> dict:
    if sc.polytope is None:
        raise VFCError("SCHEMA", "complete-polytope needs 'polytope' and 'point'")
    out = tropical_complete_polytope(sc.polytope, sc.point)
    return {"status": "pass", "polytope": sc.polytope.to_json(), "point": [fraction_str(x) for x in sc.point],
            "completion": out.to_json(), "completion_text": str(out)}


def cmd_validate(sc, args) -> dict:
    ctx = _need_category(sc)
    K = ctx.K
    proper, pdiag = is_proper(K, ctx.density)
    complete, cdiag = is_complete(K, ctx.density)
    charts = [{"id": cid, "n": K[cid].chart.n, "m": K[cid].chart.m, "rank": K[cid].rank,
               "group_order": K[cid].group.order, "polytope": K[cid].chart.polytope.to_json(),
               "strata": [[fraction_str(x) for x in v] for v in K[cid].strata()]} for cid in K.order]
    return {"status": "pass", "charts": charts, "transitions": [[t.i, t.j] for t in K.transitions],
            "virtual_dimension": virtual_dimension(K), "proper": proper, "complete": complete,
            "diagnostics": dict(pdiag, **cdiag)}


def cmd_vclass(sc, args) -> dict:
    ctx = _need_category(sc)
    vc = ctx.vclass()
    rep = {"status": "pass", "virtual_class": vc.to_json(),
           "chart_counts": {c: _ratio(n) for c, n in vc.chart_counts().items()}}
    if len(ctx.K.order) == 1:
        rep["signed_count"] = _ratio(vc.signed_count())
    return rep


def cmd_integrate(sc, args) -> dict:
    ctx = _need_category(sc)
    vc = ctx.vclass()
    name, theta = _integrand(sc, ctx)
    return {"status": "pass", "integrand": name, "integral": integrate_vclass(vc, theta, ctx.partition()),
            "dimension": vc.dimension}


def cmd_pushforward(sc, args) -> dict:
    ctx = _need_category(sc)
    if not ctx.pi:
        raise VFCError("NOT_MAPPED", "scenario has no evaluation map")
    vc = ctx.vclass()
    name = sc.integrand or "one"
    theta = ctx.forms[name] if name != "one" else constant_form(ctx.chart_dim)
    cfg = PushforwardConfig(ctx.dim_a)
    out = pushforward(vc, ctx.pi, theta, cfg, ctx.partition())
    rep = {"status": "pass", "integrand": name, "config": cfg.to_json(), "target_dim": ctx.dim_a}
    if ctx.dim_a == 0:
        rep["value"] = float(out)
        return rep
    Y = sc.samples if sc.samples is not None else np.linspace(-2.0, 2.0, 9)[:, None] * np.ones((1, ctx.dim_a))
    if Y.ndim != 2 or Y.shape[1] != ctx.dim_a:
        raise VFCError("BAD_DIM", f"samples must be points of R^{ctx.dim_a}")
    rep["degree"] = out.degree
    rep["samples"] = Y.tolist()
    rep["values"] = out.coeffs(Y).tolist()
    return rep


def cmd_check(sc, args) -> dict:
    ctx = _need_category(sc)
    names = args.suite or list(sc.checks) or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise VFCError("SCHEMA", f"unknown suites {unknown}; known: {list(SUITES)}")
    # shared objects are built once up front so the concurrent suites only read the cache
    vc = ctx.vclass()
    ctx.partition(PARTITION_A)
    ctx.partition(PARTITION_B)
    with ThreadPoolExecutor(max_workers=min(len(names), 4)) as pool:
        reports = list(pool.map(lambda n: run_suites(ctx, [n])[0], names))
    rep = {"suites": reports, "dimension": vc.dimension}
    if vc.dimension == 0 or sc.integrand:
        name, theta = _integrand(sc, ctx)
        rep["integrand"], rep["integral"] = name, integrate_vclass(vc, theta, ctx.partition())
    rep["status"] = "fail" if any(r["status"] == "fail" for r in reports) else "pass"
    return rep


HANDLERS = {"complete-polytope": cmd_complete_polytope, "validate": cmd_validate, "vclass": cmd_vclass,
            "integrate": cmd_integrate, "pushforward": cmd_pushforward, "check": cmd_check}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vfc", description="Build and check virtual fundamental classes "
                                "of small Kuranishi categories.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("scenario", help="scenario JSON file, or the name of a shipped scenario")
    p.add_argument("--seed", type=int, help="perturbation seed (default: the scenario's, else 0)")
    p.add_argument("--tol", type=float, help="one tolerance for every check, replacing the defaults")
    p.add_argument("--grid", type=float, help="sampling grid density, points per unit length")
    p.add_argument("--eps", type=float, help="cutoff sharpness, in (0, 1/2)")
    p.add_argument("--report", type=Path, metavar="PATH", help="also write the report here")
    p.add_argument("--suite", action="append", choices=SUITES, metavar="NAME",
                   help="run only this suite (repeatable); one of " + ", ".join(SUITES))
    return p


def _flags(args) -> dict:
    return {"seed": args.seed, "tol": args.tol, "grid": args.grid, "eps": args.eps,
            "suite": list(args.suite) if args.suite else None}


def _clean(obj):
    """Plain JSON types only, with non-finite floats spelled out."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def render(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def run(argv=None) -> tuple[int, dict]:
    """Parse ``argv``, execute the command and return (exit code, report)."""
    return execute(parser().parse_args(argv))


def execute(args) -> tuple[int, dict]:
    report = {"schema": REPORT_SCHEMA, "command": args.command, "flags": _flags(args), "version": __version__}
    try:
        sc = load(args.scenario, seed=args.seed, eps=args.eps, grid=args.grid, tol=args.tol)
        report["scenario"] = sc.name
        report["scenario_sha256"] = sc.digest
        with np.errstate(all="ignore"):
            report.update(HANDLERS[args.command](sc, args))
        code = EXIT_PASS if report["status"] == "pass" else EXIT_FAIL
    except VFCError as exc:
        report["status"] = "error"
        report["error"] = exc.to_json()
        code = EXIT_INPUT if exc.is_input_error else EXIT_NUMERICAL
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        report["status"] = "error"
        report["error"] = {"code": "NONCONVERGED", "message": str(exc), "context": {}}
        code = EXIT_NUMERICAL
    report["exit_code"] = code
    return code, report


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    code, report = execute(args)
    text = render(report)
    sys.stdout.write(text)
    if args.report is not None:
        try:
            args.report.write_text(text)
        except OSError as exc:
            sys.stderr.write(f"vfc: cannot write report: {exc.strerror}\n")
            return EXIT_INPUT
    return code


if __name__ == "__main__":
    sys.exit(main())
