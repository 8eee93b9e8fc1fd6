"""Command-line entry points.

Subcommands: `solve` (static run, sync or async), `daily` (quasi-static
time-series loop), `verify` (operator property suite), `acerror`
(linearization error report).  Exit codes: 0 success, 1 configuration or
parameter-validation error, 2 non-convergence.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import operators as ops
from .acflow import linearization_error, solve_ac, NotConverged
from .errors import DistvoltError
from .network import linear_voltage
from .scenario import Scenario, run_daily, run_static, _write_csv
from .solver import initial_state, solve_sync

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


def _common(sub):
    sub.add_argument("--config", required=True, help="scenario YAML file")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--chi", type=int, default=None)
    plot = sub.add_mutually_exclusive_group()
    plot.add_argument("--plot", dest="plot", action="store_true", default=True)
    plot.add_argument("--no-plot", dest="plot", action="store_false")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="distvolt",
        description="Distributed voltage control on radial feeders")
    subs = parser.add_subparsers(dest="command", required=True)

    p_solve = subs.add_parser("solve", help="static solve with trace output")
    _common(p_solve)
    p_solve.add_argument("--mode", choices=["sync", "async"], default=None)
    p_solve.add_argument("--eta", type=float, default=None)
    p_solve.add_argument("--tol", type=float, default=None)
    p_solve.add_argument("--max-iter", type=int, default=None)

    p_daily = subs.add_parser("daily", help="quasi-static daily simulation")
    _common(p_daily)
    p_daily.add_argument("--mode", choices=["sync", "async"], default=None)
    p_daily.add_argument("--minutes", type=int, default=None)
    p_daily.add_argument("--measurement", choices=["linear", "ac"], default=None)

    p_verify = subs.add_parser("verify", help="operator property suite")
    _common(p_verify)
    p_verify.add_argument("--pairs", type=int, default=1000)
    p_verify.add_argument("--scale", type=float, default=0.01)

    p_ac = subs.add_parser("acerror", help="linearization error report")
    _common(p_ac)
    return parser


def cmd_solve(args):
    scenario = Scenario.from_file(args.config)
    summary = run_static(scenario, mode=args.mode, seed=args.seed, chi=args.chi,
                         eta=args.eta, out_dir=args.out, tol=args.tol,
                         max_iter=args.max_iter)
    print(f"mode={summary['mode']} status={summary['status']} "
          f"iterations={summary['iterations']} residual={summary['residual']:.3e}")
    print(f"kkt: voltage={summary['kkt_voltage']:.3e} "
          f"injection={summary['kkt_injection']:.3e} "
          f"balance={summary['kkt_balance']:.3e}")
    print("p* (kW):  " + " ".join(f"{v:8.2f}" for v in summary["p_kw"]))
    print("q* (kVar):" + " ".join(f"{v:8.2f}" for v in summary["q_kvar"]))
    if args.out and args.plot:
        from .plots import convergence_figure
        convergence_figure(summary["trace_rows"], summary["trace_header"],
                           Path(args.out) / "convergence.png",
                           title=f"{summary['mode']} solve")
    return EXIT_OK if summary["status"] == "converged" else EXIT_NOT_CONVERGED


def cmd_daily(args):
    scenario = Scenario.from_file(args.config)
    result = run_daily(scenario, mode=args.mode, seed=args.seed, chi=args.chi,
                       out_dir=args.out, minutes=args.minutes,
                       measurement=args.measurement)
    verr = np.array([r[2] for r in result["rows"]])
    kkt = np.array([r[3] for r in result["rows"]])
    print(f"mode={result['mode']} minutes={result['minutes']} "
          f"voltage_error mean={verr.mean():.4e} max={verr.max():.4e} "
          f"kkt max={kkt.max():.3e}")
    if args.out and args.plot:
        from .plots import daily_figure
        daily_figure(result["rows"], Path(args.out) / "daily.png",
                     title=f"{result['mode']} daily run")
    return EXIT_OK


def cmd_verify(args):
    scenario = Scenario.from_file(args.config)
    model, region = scenario.build_model()
    cost = scenario.build_cost(model.n)
    params = scenario.build_params(model, cost, chi=0)
    ctx = ops.make_context(model, region, cost, params)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    reports = ops.property_report(ctx, rng, pairs=args.pairs, scale=args.scale)
    width = max(len(r["property"]) for r in reports)
    for r in reports:
        print(f"{r['property']:<{width}}  worst_margin={r['worst_margin']:+.3e} "
              f"pairs={r['pairs']}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "margins.csv",
                   ["property", "alpha", "worst_margin", "pairs"],
                   [(r["property"], float(r["alpha"]), float(r["worst_margin"]),
                     r["pairs"]) for r in reports])
        if args.plot:
            from .plots import margins_figure
            margins_figure(reports, out / "margins.png")
    return EXIT_OK


def cmd_acerror(args):
    scenario = Scenario.from_file(args.config)
    model, region = scenario.build_model()
    cost = scenario.build_cost(model.n)
    params = scenario.build_params(model, cost, chi=0)
    state0 = initial_state(model, region)
    deep = solve_sync(state0, params, model, region, cost, tol=1e-12,
                      max_iter=30_000, record=False)
    if not deep.converged:
        print(f"reference solve did not converge: {deep.status}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    zero = np.zeros(model.n)
    rows = []
    for tag, p, q in (("no_control", zero, zero),
                      ("converged_control", deep.state.p, deep.state.q)):
        sol = solve_ac(model, p, q)
        err = linearization_error(model, p, q)
        u_lin = np.sqrt(2.0 * linear_voltage(model, p, q))
        rows.append((tag, err, sol.iterations, sol.residual))
        print(f"{tag:<18} max_rel_voltage_error={err:.3e} "
              f"(sweep {sol.iterations} iters, residual {sol.residual:.2e})")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            _write_csv(out / f"acerror_{tag}.csv",
                       ["bus", "u_linear", "u_ac"],
                       [(j + 1, float(u_lin[j]), float(sol.u[j]))
                        for j in range(model.n)])
            if args.plot:
                from .plots import acerror_figure
                acerror_figure(u_lin, sol.u, out / f"acerror_{tag}.png",
                               title=f"linearization check: {tag}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"solve": cmd_solve, "daily": cmd_daily,
                "verify": cmd_verify, "acerror": cmd_acerror}
    try:
        return handlers[args.command](args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except DistvoltError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
