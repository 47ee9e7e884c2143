"""Batch trials over a scenario and the report built from them.

Each trial gets its own seed, ``mix_seed(base_seed, start_id, trial_id)``
(see :mod:`branchmanip.seeding`), which seeds the executor; the planner and
sensor streams are derived from it. Rows are always ordered by
(start_id, trial_id) whatever order the trials finish in.

``trials.csv`` holds only values that are reproducible for a fixed seed.
Wall-clock planning and elapsed times live in ``timings.csv`` and in the
summary, so two runs of the same scenario give byte-identical ``trials.csv``
and force traces.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import ScenarioConfig, dump_scenario, scenario_from_dict
from .executor import ExecutionOutcome, execute
from .seeding import mix_seed

REPORT_HEADER = ["start_id", "trial_id", "success", "final_offset", "path_length",
                 "replan_count", "peak_force"]
TIMING_HEADER = ["start_id", "trial_id", "planning_time", "elapsed"]
LOG_HEADER = ["time", "x", "y", "z", "qw", "qx", "qy", "qz", "magnitude", "segment_idx", "event"]


class ReportMismatch(ValueError):
    """A summary whose aggregates cannot be recomputed from its rows."""


def trial_seed(base_seed: int, start_id: int, trial_id: int) -> int:
    return mix_seed(base_seed, start_id, trial_id)


@dataclass(frozen=True)
class TrialRow:
    start_id: int
    trial_id: int
    success: bool
    final_offset: float
    path_length: float
    replan_count: int
    peak_force: float
    planning_time: float = 0.0
    elapsed: float = 0.0
    error: str = ""


def run_trial(cfg: ScenarioConfig, start_id: int, trial_id: int):
    """One execution; any exception becomes a failed row. Returns (row, outcome or None)."""
    seed = trial_seed(cfg.base_seed, start_id, trial_id)
    try:
        outcome = execute(cfg.starts[start_id].pose(), cfg.goal.region(), cfg.branch.sim_branch(),
                          cfg.branch.constraint(), cfg.planner.planner_config(),
                          cfg.execution.execution_config(cfg.goal.radius_R_m, seed))
    except Exception as exc:  # a broken trial must not stop the batch
        return TrialRow(start_id, trial_id, False, math.nan, 0.0, 0, 0.0,
                        error=f"{type(exc).__name__}: {exc}"), None
    row = TrialRow(start_id, trial_id, outcome.success, outcome.final_offset,
                   outcome.executed_path_length, outcome.replan_count,
                   outcome.peak_force_overall, outcome.planning_time, outcome.elapsed,
                   outcome.failure)
    return row, outcome


def log_csv(outcome: ExecutionOutcome) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for s in outcome.log.steps:
        w.writerow([repr(s.time), *map(repr, s.position), *map(repr, s.orientation),
                    repr(s.magnitude), s.active_segment, s.event])
    return buf.getvalue()


def _trial_job(args):
    cfg_dict, start_id, trial_id = args
    cfg = scenario_from_dict(cfg_dict)
    row, outcome = run_trial(cfg, start_id, trial_id)
    if outcome is None:
        return row, None, None
    return row, outcome.log.force_csv(), log_csv(outcome)


def run_experiment(cfg: ScenarioConfig, out_dir=None, jobs: int = 1,
                   progress=None) -> "TrialReport":
    """All starts x trials. With ``out_dir`` the report, traces and manifest are written."""
    tasks = [(cfg.to_dict(), s, t) for s in range(len(cfg.starts))
             for t in range(cfg.trials_per_start)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial_job, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_trial_job(task))
            if progress is not None:
                progress(results[-1][0])
    results.sort(key=lambda r: (r[0].start_id, r[0].trial_id))
    report = TrialReport(cfg.name, [r[0] for r in results])
    if out_dir is not None:
        out = Path(out_dir)
        traces = out / "traces"
        traces.mkdir(parents=True, exist_ok=True)
        for row, force, log in results:
            stem = f"start{row.start_id}_trial{row.trial_id}"
            if force is not None:
                (traces / f"{stem}_force.csv").write_text(force)
                (traces / f"{stem}_log.csv").write_text(log)
        report.write(out)
        (out / "scenario.yaml").write_text(dump_scenario(cfg))
        (out / "plots.json").write_text(json.dumps(plot_manifest(report), indent=2) + "\n")
    return report


def plot_manifest(report: "TrialReport") -> dict:
    return {"charts": [
        {"kind": "line", "title": "Grasp force magnitude over time",
         "files": "traces/*_force.csv", "x": "time", "y": "magnitude", "group": "segment_idx",
         "reference_lines": {"threshold_N": 40.0}},
        {"kind": "polyline3d", "title": "Executed end-effector path",
         "files": "traces/*_log.csv", "x": "x", "y": "y", "z": "z", "color": "segment_idx"},
        {"kind": "table", "title": f"Per-start summary ({report.scenario})",
         "file": "summary.json", "rows": "per_start"},
    ]}


# --------------------------------------------------------------------------
# report


def _mean(xs) -> Optional[float]:
    xs = list(xs)
    return statistics.fmean(xs) if xs else None


def _std(xs) -> Optional[float]:
    xs = list(xs)
    if not xs:
        return None
    return statistics.stdev(xs) if len(xs) > 1 else 0.0


def _close(a, b) -> bool:
    if a is None or b is None:
        return a is b
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12)


@dataclass
class TrialReport:
    scenario: str
    rows: list

    def start_ids(self) -> list:
        return sorted({r.start_id for r in self.rows})

    def per_start(self) -> list:
        """Per-start aggregates. Path length and goal offset average the
        successful trials only; timing and replans average all trials."""
        out = []
        for sid in self.start_ids():
            rows = [r for r in self.rows if r.start_id == sid]
            ok = [r for r in rows if r.success]
            out.append({
                "start_id": sid,
                "trials": len(rows),
                "success_count": len(ok),
                "planning_time_mean": _mean(r.planning_time for r in rows),
                "planning_time_std": _std(r.planning_time for r in rows),
                "replan_mean": _mean(r.replan_count for r in rows),
                "replan_std": _std(r.replan_count for r in rows),
                "path_length_mean": _mean(r.path_length for r in ok),
                "goal_offset_mean": _mean(r.final_offset for r in ok),
            })
        return out

    def totals(self) -> dict:
        n = len(self.rows)
        ok = sum(r.success for r in self.rows)
        return {"trials": n, "success_count": ok, "success_rate": ok / n if n else None,
                "failed_trials": n - ok,
                "replan_mean": _mean(r.replan_count for r in self.rows),
                "planning_time_total": sum(r.planning_time for r in self.rows)}

    def summary(self) -> dict:
        return {"scenario": self.scenario, "per_start": self.per_start(), "totals": self.totals(),
                "errors": [{"start_id": r.start_id, "trial_id": r.trial_id, "error": r.error}
                           for r in self.rows if r.error]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r.start_id, r.trial_id, str(r.success).lower(), repr(r.final_offset),
                        repr(r.path_length), r.replan_count, repr(r.peak_force)])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMING_HEADER)
        for r in self.rows:
            w.writerow([r.start_id, r.trial_id, repr(r.planning_time), repr(r.elapsed)])
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.csv").write_text(self.to_csv())
        (out / "timings.csv").write_text(self.timings_csv())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")

    @classmethod
    def load(cls, out_dir) -> "TrialReport":
        """Read a written report and check the summary against its rows."""
        out = Path(out_dir)
        trials = list(csv.DictReader(io.StringIO((out / "trials.csv").read_text())))
        times = {(int(t["start_id"]), int(t["trial_id"])): t
                 for t in csv.DictReader(io.StringIO((out / "timings.csv").read_text()))}
        summary = json.loads((out / "summary.json").read_text())
        errors = {(e["start_id"], e["trial_id"]): e["error"] for e in summary.get("errors", [])}
        rows = []
        for t in trials:
            key = (int(t["start_id"]), int(t["trial_id"]))
            tm = times.get(key, {"planning_time": "0.0", "elapsed": "0.0"})
            rows.append(TrialRow(key[0], key[1], t["success"] == "true", float(t["final_offset"]),
                                 float(t["path_length"]), int(t["replan_count"]),
                                 float(t["peak_force"]), float(tm["planning_time"]),
                                 float(tm["elapsed"]), errors.get(key, "")))
        report = cls(summary["scenario"], rows)
        fresh = report.per_start()
        if len(fresh) != len(summary["per_start"]):
            raise ReportMismatch("per_start entries do not match the rows")
        for got, want in zip(summary["per_start"], fresh):
            for k, v in want.items():
                if not _close(got.get(k), v):
                    raise ReportMismatch(f"start {want['start_id']}: {k} is {got.get(k)}, "
                                         f"rows give {v}")
        return report

    def table(self) -> str:
        lines = [f"{'start':>5} {'success':>9} {'replans':>15} {'plan time s':>17} "
                 f"{'path m':>8} {'offset m':>9}"]
        for a in self.per_start():
            def fmt(v, spec):
                return "-" if v is None else format(v, spec)
            lines.append(
                f"{a['start_id']:>5} {a['success_count']:>4}/{a['trials']:<4} "
                f"{fmt(a['replan_mean'], '.2f'):>7} ± {fmt(a['replan_std'], '<5.2f')} "
                f"{fmt(a['planning_time_mean'], '.1f'):>8} ± {fmt(a['planning_time_std'], '<6.1f')} "
                f"{fmt(a['path_length_mean'], '.3f'):>8} {fmt(a['goal_offset_mean'], '.4f'):>9}")
        t = self.totals()
        lines.append(f"total {t['success_count']}/{t['trials']} successful")
        return "\n".join(lines)
