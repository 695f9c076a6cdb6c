"""
Command-line front end.

Subcommands: ``solve`` (distributed run), ``central`` (reference solve) and
``toys`` (small nonconvex examples). Exit status is 0 on success, 2 when a
distributed run stops without converging and 1 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, toylab
from .coordinator import lookup_setting, run, trace_csv, with_variant
from .decomposition import AlgoParams
from .errors import OpfError, SolverDiverged, UnknownScenario, UnknownSetting
from .formulation import flat_start, solve_centralized
from .network import load_case

log = logging.getLogger("opfdd")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2

EXPLICIT = ("nu", "rho_pq", "rho_vtheta", "alpha_i", "alpha_ij")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    p = _Parser(prog="opfdd", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"opfdd {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run a distributed algorithm on a case")
    s.add_argument("--case", required=True, help="bundled case name or path to .m/.json")
    s.add_argument("--variant", choices=["a1", "a2", "a3"], default="a3", type=str.lower)
    s.add_argument("--setting", help="named parameter setting A..T")
    s.add_argument("--nu", type=float)
    s.add_argument("--rho-pq", type=float)
    s.add_argument("--rho-vtheta", type=float)
    s.add_argument("--alpha-i", type=float)
    s.add_argument("--alpha-ij", type=float)
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--max-iter", type=int, default=200_000)
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--thin", type=int, default=1, help="keep every n-th trace row")
    s.add_argument("--warm", choices=["flat", "previous"], default="flat",
                   help="starting point of each line solve")
    s.add_argument("--no-timing", action="store_true",
                   help="write zeros in the wall_ms column so traces are byte-identical")
    s.add_argument("--gnuplot-hints", action="store_true")

    c = sub.add_parser("central", help="solve the full OPF from the flat start")
    c.add_argument("--case", required=True)
    c.add_argument("--tol", type=float, default=1e-8)
    c.add_argument("--out", default=".")

    t = sub.add_parser("toys", help="reproduce one example scenario")
    t.add_argument("which", choices=["a", "b"], type=str.lower)
    t.add_argument("scenario")
    t.add_argument("--out", default=".")
    t.add_argument("--gnuplot-hints", action="store_true")
    return p


def _params(args) -> AlgoParams:
    given = {k: getattr(args, k) for k in EXPLICIT if getattr(args, k) is not None}
    if args.setting and given:
        raise UsageError("--setting cannot be combined with explicit "
                         + ", ".join("--" + k.replace("_", "-") for k in given))
    if args.setting:
        base = lookup_setting(args.setting)
    elif "nu" in given:
        base = AlgoParams(nu=given["nu"], rho_pq=given.get("rho_pq", 0.0),
                          rho_vth=given.get("rho_vtheta", 0.0),
                          alpha_i=given.get("alpha_i", 0.0), alpha_ij=given.get("alpha_ij", 0.0))
    else:
        raise UsageError("give either --setting or at least --nu")
    if args.eps <= 0:
        raise UsageError("--eps must be positive")
    return with_variant(base, args.variant, args.eps)


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x):
    return "nan" if x is None else f"{x:.6g}"


def cmd_solve(args):
    params = _params(args)
    if args.thin < 1 or args.max_iter < 1 or args.workers < 1:
        raise UsageError("--thin, --max-iter and --workers must be positive")
    net = load_case(args.case)
    out = _outdir(args.out)
    report, trace = run(net, params, max_iter=args.max_iter, workers=args.workers,
                        warm=args.warm)
    if args.no_timing:
        trace = [type(r)(r.k, r.residual_norm, r.dual_value, r.gen_cost, 0.0) for r in trace]
    (out / "trace.csv").write_text(trace_csv(trace, args.thin))
    doc = json.loads(report.to_json())
    doc["setting"] = args.setting.upper() if args.setting else None
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    setting = args.setting.upper() if args.setting else "custom"
    print(f"case={net.name} variant={params.variant} setting={setting} "
          f"iters={report.iterations} ro_gap={_fmt(report.ro_gap)} amd_gap={_fmt(report.amd_gap)} "
          f"status={report.status}")
    if args.gnuplot_hints:
        print(_hint_trace(out / "trace.csv"))
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_central(args):
    net = load_case(args.case)
    out = _outdir(args.out)
    status = "converged"
    try:
        state, cost = solve_centralized(net, flat_start(net), tol=args.tol)
        code = EXIT_OK
    except SolverDiverged as exc:
        state, cost, _ = exc.result
        status, code = "max_iter", EXIT_NOT_CONVERGED
        log.error("%s", exc)
    doc = {"case": net.name, "status": status, "cost": cost, "version": __version__}
    for name in ("v", "theta", "p_g", "q_g", "p_f", "q_f", "p_t", "q_t"):
        doc[name] = np.asarray(getattr(state, name)).tolist()
    (out / "central.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"case={net.name} cost={cost:.6f} status={status}")
    return code


def cmd_toys(args):
    res = toylab.run_scenario(args.which, args.scenario)
    out = _outdir(args.out)
    path = out / toylab.csv_name(args.which, res.scenario)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(res.header)
        w.writerows([[repr(float(x)) if not isinstance(x, int) else x for x in row]
                     for row in res.rows])
    print(f"{'PASS' if res.passed else 'FAIL'} {args.which}/{res.scenario}: {res.summary}")
    if args.gnuplot_hints:
        print(_hint_toy(path, res.header))
    return EXIT_OK if res.passed else EXIT_NOT_CONVERGED


def _hint_trace(path):
    return (f"set datafile separator ','\nset logscale y\nset xlabel 'k'\n"
            f"plot '{path}' using 1:2 skip 1 with lines title 'residual norm'")


def _hint_toy(path, header):
    if header[0] == "lam":
        return (f"set datafile separator ','\nset xlabel 'lambda'\n"
                f"plot '{path}' using 1:2 skip 1 with lines title 'dual'")
    if header == toylab.SUBGRADIENT_HEADER:
        return (f"set datafile separator ','\nset xlabel 'k'\n"
                f"plot '{path}' using 1:4 skip 1 with lines title 'residual'")
    return (f"set datafile separator ','\nset logscale y\nset xlabel 'k'\n"
            f"plot '{path}' using 1:5 skip 1 with lines title 'primal', "
            f"'' using 1:6 skip 1 with lines title 'dual'")


def _configure_logging():
    level = os.environ.get("OPF_DD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    try:
        args = _build_parser().parse_args(argv)
        handler = {"solve": cmd_solve, "central": cmd_central, "toys": cmd_toys}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"opfdd: usage error: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"opfdd: file not found: {exc.filename or exc}", file=sys.stderr)
    except (UnknownSetting, UnknownScenario) as exc:
        print(f"opfdd: {exc.args[0] if exc.args else exc}", file=sys.stderr)
    except (OpfError, ValueError, OSError) as exc:
        print(f"opfdd: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
