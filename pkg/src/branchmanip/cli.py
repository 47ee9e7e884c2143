"""branchmanip command-line interface.

Exit codes: 0 success, 1 config or I/O error, 2 solver or planner failure,
3 infeasible input, 4 experiment (or simulation) finished with a failed trial.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, branch_from_dict, load_scenario, read_config
from .dlo import BranchParams, EndpointTarget, SolveFailed, Unreachable, solve_shape
from .experiment import ReportMismatch, TrialReport, log_csv, run_experiment, run_trial
from .planner import InfeasibleStart, PlanningTimeout, plan
from .safety import GridMode, RandomMode, build_safety_map

log = logging.getLogger("branchmanip")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INFEASIBLE, EXIT_TRIAL_FAILED = 0, 1, 2, 3, 4


GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": ".", "jobs": 1, "verbose": False}


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args):
    if not args.config:
        raise UsageError("--config is required for this command")
    cfg = load_scenario(args.config)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, base_seed=args.seed)
    return cfg


def _branch_params(args):
    if not args.config:
        return BranchParams()
    return branch_from_dict(read_config(args.config)).params()


# --------------------------------------------------------------------------
# commands


def cmd_solve_shape(args) -> int:
    params = _branch_params(args)
    x, z = args.target
    try:
        target = EndpointTarget(x, z, args.tip_angle)
    except ValueError as exc:
        raise ConfigError(f"target: {exc}") from None
    try:
        sol = solve_shape(params, target)
    except Unreachable as exc:
        print(f"unreachable: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolveFailed as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "theta", "x", "z"])
    for s, th, (px, pz) in zip(sol.s_grid, sol.theta, sol.positions):
        w.writerow([repr(float(s)), repr(float(th)), repr(float(px)), repr(float(pz))])
    path = _out_dir(args) / "shape.csv"
    path.write_text(buf.getvalue())
    print(f"energy_J {sol.energy:.9g}")
    print(f"endpoint_residual_m {sol.endpoint_residual:.3e}")
    print(f"angle_residual_rad {max(sol.angle_residuals):.3e}")
    print(f"converged {str(sol.converged).lower()}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_safety_map(args) -> int:
    params = _branch_params(args)
    if (args.random is None) == (args.grid is None):
        raise UsageError("give exactly one of --random COUNT or --grid XMIN XMAX ZMIN ZMAX")
    try:
        if args.random is not None:
            mode = RandomMode(args.random, 0 if args.seed is None else args.seed)
        else:
            mode = GridMode(tuple(args.grid), args.resolution)
    except ValueError as exc:
        raise ConfigError(f"map mode: {exc}") from None
    smap = build_safety_map(params, mode, jobs=args.jobs)
    path = _out_dir(args) / "safety_map.csv"
    path.write_text(smap.to_csv())
    for label, n in smap.counts().items():
        print(f"{label} {n}")
    print(f"wrote {path}")
    return EXIT_OK


def _start_id(cfg, sid: int) -> int:
    if not 0 <= sid < len(cfg.starts):
        raise ConfigError(f"--start-id {sid}: scenario has {len(cfg.starts)} starts")
    return sid


def cmd_plan(args) -> int:
    cfg = _scenario(args)
    sid = _start_id(cfg, args.start_id)
    pcfg = cfg.planner.planner_config()
    if args.seed is not None:
        from dataclasses import replace
        pcfg = replace(pcfg, rng_seed=args.seed)
    try:
        path = plan(cfg.starts[sid].pose(), cfg.goal.region(), cfg.branch.constraint(),
                    cfg.branch.params(), pcfg)
    except InfeasibleStart as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PlanningTimeout as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = _out_dir(args) / "path.csv"
    out.write_text(path.to_csv())
    print(f"waypoints {len(path.waypoints)}")
    print(f"path_length_m {path.total_length:.4f}")
    print(f"final_offset_m {path.final_offset:.4f}")
    print(f"planning_time_s {path.planning_time:.2f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    sid = _start_id(cfg, args.start_id)
    row, outcome = run_trial(cfg, sid, args.trial_id)
    if outcome is None:
        print(f"trial failed: {row.error}", file=sys.stderr)
        return EXIT_TRIAL_FAILED
    out = _out_dir(args)
    (out / "force.csv").write_text(outcome.log.force_csv())
    (out / "log.csv").write_text(log_csv(outcome))
    print(f"success {str(outcome.success).lower()}")
    print(f"final_offset_m {outcome.final_offset:.4f}")
    print(f"replans {outcome.replan_count}")
    print(f"peak_force_N {outcome.peak_force_overall:.1f}")
    print(f"peak_force_final_segment_N {outcome.peak_force_final_segment:.1f}")
    print(f"planning_time_s {outcome.planning_time:.2f}")
    if not outcome.success:
        print(f"failure: {outcome.failure}", file=sys.stderr)
        return EXIT_TRIAL_FAILED
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _scenario(args)
    out = _out_dir(args)

    def progress(row):
        log.info("start %d trial %d: success=%s replans=%d", row.start_id, row.trial_id,
                 row.success, row.replan_count)

    report = run_experiment(cfg, out, jobs=args.jobs, progress=progress)
    print(report.table())
    print(f"wrote {out}")
    return EXIT_OK if all(r.success for r in report.rows) else EXIT_TRIAL_FAILED


def cmd_report(args) -> int:
    try:
        report = TrialReport.load(args.out)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ReportMismatch):
            raise
        raise ConfigError(f"unreadable report in {args.out}: {exc!r}") from None
    if args.json:
        print(json.dumps(report.summary(), indent=2))
    else:
        print(report.table())
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    # shared flags are accepted before or after the command; defaults are
    # filled in after parsing so a subcommand never overwrites an earlier value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="scenario or branch file (YAML, or JSON by suffix)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base seed override")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: .)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="log progress")

    parser = argparse.ArgumentParser(prog="branchmanip", parents=[common],
                                     description="Force-aware branch manipulation in simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-shape", parents=[common], help="minimum-energy branch shape")
    p.add_argument("--target", type=float, nargs=2, metavar=("X", "Z"), required=True,
                   help="grasp point in the branch plane, meters")
    p.add_argument("--tip-angle", type=float, default=None, help="tip angle, radians")
    p.set_defaults(func=cmd_solve_shape)

    p = sub.add_parser("safety-map", parents=[common], help="Safe/Caution/Risky map")
    p.add_argument("--random", type=int, metavar="COUNT", help="random targets in the disk")
    p.add_argument("--grid", type=float, nargs=4, metavar=("XMIN", "XMAX", "ZMIN", "ZMAX"))
    p.add_argument("--resolution", type=float, default=0.05, help="grid cell size, meters")
    p.set_defaults(func=cmd_safety_map)

    p = sub.add_parser("plan", parents=[common], help="plan one path from a scenario start")
    p.add_argument("--start-id", type=int, default=0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[common], help="run one trial with force monitoring")
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--trial-id", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", parents=[common], help="all starts x trials")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", parents=[common], help="check and print a written report")
    p.add_argument("--json", action="store_true", help="print the summary JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, ReportMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
