"""Command-line entry point: ``rotirs {converge,sweep,decompose,props}``."""

from __future__ import annotations

import argparse
import ast
import sys

import numpy as np

from . import analysis, harness
from .config import ConfigError, load_config
from .geometry import build_geometry
from .mu_solver import SCHEMES, normalize_scheme

DEFAULT_VALUES = {
    "power": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
    "antennas": [4, 9, 16, 25, 36, 49],
    "users": [2, 3, 4, 5, 6],
    "xi": list(np.geomspace(0.071, 0.707, 6)),
}


def _parse_override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = (p.strip() for p in text.split("=", 1))
    try:
        return key, ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return key, value


def _parse_values(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _common(parser):
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--trials", type=int, help="Monte Carlo trials per cell")
    parser.add_argument("--out", help="results CSV path; traces go to a *_traces sibling")
    parser.add_argument("--scheme", action="append",
                        help=f"scheme(s) to report, repeatable or comma separated; one of {SCHEMES}")
    parser.add_argument("--set", dest="overrides", action="append", type=_parse_override,
                        default=[], metavar="KEY=VALUE", help="override one configuration field")
    parser.add_argument("--workers", type=int, default=1, help="worker processes")
    parser.add_argument("--timing", action="store_true", help="add a wall_time column")


def build_parser():
    parser = argparse.ArgumentParser(prog="rotirs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("converge", help="AO traces and converged sum rates per scheme")
    _common(p)

    p = sub.add_parser("sweep", help="sum rate versus power, antennas, users or xi")
    _common(p)
    p.add_argument("--axis", required=True, choices=harness.AXES)
    p.add_argument("--values", type=_parse_values, help="comma-separated sweep values")

    p = sub.add_parser("decompose", help="column-power / efficiency split of the dual gain vs xi")
    _common(p)
    p.add_argument("--values", type=_parse_values, help="comma-separated xi values")
    p.add_argument("--incidence", type=float, default=analysis.DECOMPOSITION_INCIDENCE_DEG,
                   help="user angle off the panel normal (degrees)")
    p.add_argument("--offset", type=float, default=analysis.DECOMPOSITION_OFFSET_DEG,
                   help="panel angle off the BS broadside axis (degrees)")
    p.add_argument("--iterations", type=int, default=100)

    p = sub.add_parser("props", help="far-field separability, power bounds and alignment bounds")
    _common(p)
    p.add_argument("--geometries", type=int, default=50)
    return parser


def _config(args):
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    return load_config(args.config, **overrides)


def _schemes(args):
    if not args.scheme:
        return SCHEMES
    names = [normalize_scheme(s) for item in args.scheme for s in item.split(",") if s.strip()]
    return tuple(dict.fromkeys(names))


def _print_summary(results, out):
    rows = harness.summarize(results)
    print(f"{'axis':>9} {'value':>10} {'scheme':>9} {'mean':>9} {'stderr':>8} {'failed':>6}", file=out)
    for r in rows:
        print(f"{r['axis'] or '-':>9} {r['value']:>10.4g} {r['scheme']:>9} {r['mean']:>9.4f} "
              f"{r['stderr']:>8.4f} {r['failed']:>6d}", file=out)
    return rows


def _write_rows(rows, columns, path, out):
    if path:
        harness.write_table(rows, columns, path)
        print(f"wrote {path}", file=out)


def cmd_converge(args, out):
    config = _config(args)
    results = harness.run_trials(config, schemes=_schemes(args), workers=args.workers)
    _print_summary(results, out)
    if args.out:
        paths = harness.emit_csv(results, args.out, timing=args.timing)
        print("wrote " + ", ".join(map(str, paths)), file=out)
    return 1 if any(not r.ok for r in results) else 0


def cmd_sweep(args, out):
    config = _config(args)
    values = args.values or DEFAULT_VALUES[args.axis]
    results = harness.sweep(config, args.axis, values, config.trials, _schemes(args),
                            workers=args.workers)
    _print_summary(results, out)
    if args.out:
        paths = harness.emit_csv(results, args.out, timing=args.timing)
        print("wrote " + ", ".join(map(str, paths)), file=out)
    return 1 if any(not r.ok for r in results) else 0


DECOMPOSE_COLUMNS = ("xi", "distance", "column_gain", "efficiency_gain", "dual_gain",
                     "efficiency_fixed", "efficiency_dual", "mean_alignment", "alignment_spread",
                     "gain_variance", "psi_alpha", "psi_beta", "psi_phi")


def cmd_decompose(args, out):
    config = _config(args)
    xis = args.values or DEFAULT_VALUES["xi"]
    rows = analysis.decomposition_sweep(config, xis, incidence_deg=args.incidence,
                                        offset_deg=args.offset, seed=config.seed,
                                        max_iters=args.iterations)
    print(f"{'xi':>7} {'G_p':>8} {'G_beta':>8} {'eta':>8} {'beta_fix':>9} {'beta_dual':>9}", file=out)
    for r in rows:
        print(f"{r['xi']:>7.3f} {r['column_gain']:>8.3f} {r['efficiency_gain']:>8.4f} "
              f"{r['dual_gain']:>8.3f} {r['efficiency_fixed']:>9.3f} {r['efficiency_dual']:>9.3f}",
              file=out)
    _write_rows(rows, DECOMPOSE_COLUMNS, args.out, out)
    return 0


def cmd_props(args, out):
    config = _config(args)
    seed = config.seed
    sep = analysis.farfield_separability_suite(config, seed=seed)
    bounds = analysis.power_bounds_suite(config, geometries=args.geometries, seed=seed)
    align = analysis.alignment_bounds_check(build_geometry(config), config.p_irs, seed=seed)
    rows = [
        {"check": "farfield_separability_residual", "value": sep["max_residual"],
         "threshold": 1e-9, "passed": sep["max_residual"] < 1e-9},
        {"check": "farfield_los_efficiency_error", "value": sep["max_efficiency_error"],
         "threshold": 1e-12, "passed": sep["max_efficiency_error"] <= 1e-12},
        {"check": "coherent_ceiling_ratio_max", "value": bounds["max_ceiling_ratio"],
         "threshold": 1.0, "passed": bounds["ceiling_holds"]},
        {"check": "multistart_floor_ratio_min", "value": bounds["min_floor_ratio"],
         "threshold": 1.0, "passed": bounds["floor_holds"]},
        {"check": "alignment_bound_min_slack", "value": min(align["min_slack_rho"],
                                                            align["min_slack_delta"]),
         "threshold": 0.0, "passed": align["inequalities_hold"]},
        {"check": "spread_per_xi_ratio", "value": float(align["spread_per_xi"].max()
                                                        / align["spread_per_xi"][0]),
         "threshold": 2.0, "passed": align["slope_bounded"]},
    ]
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['check']}: {r['value']:.6g} "
              f"(threshold {r['threshold']:g})", file=out)
    print("note: the multi-start floor is a statistical surrogate for an existential bound",
          file=out)
    _write_rows(rows, ("check", "value", "threshold", "passed"), args.out, out)
    return 0 if all(r["passed"] for r in rows) else 1


COMMANDS = {"converge": cmd_converge, "sweep": cmd_sweep, "decompose": cmd_decompose,
            "props": cmd_props}


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
