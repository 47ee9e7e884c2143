"""Plan, execute, monitor force and replan when the threshold is crossed.

A plan's execution is called a segment here: segment 0 is the first plan,
segment k the k-th replan. Replanning starts from the pose where the
monitor aborted. Every plan aims at a ball of radius R/2: the
first at the goal center, replans at fresh points drawn within
R/2 - servo tolerance of the center, so a completed path always ends
inside the goal region of radius R.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .planner import (BranchConstraint, GoalRegion, InfeasibleStart, PlannerConfig, PlanPath,
                      PlanningTimeout, WaypointPose, plan)
from .safety import Classifier
from .seeding import mix_seed
from .sim import (AbortedByMonitor, EndEffectorState, ForceReading, MonitorDecision, ServoParams,
                  SimBranch, WarmStart, force_trace_csv, run_segment)

EVENTS = ("none", "threshold_violation", "replan_started", "goal_reached")


class Exhausted(RuntimeError):
    """Replan cap or planning budget reached without success."""

    def __init__(self, outcome: "ExecutionOutcome"):
        super().__init__(f"execution exhausted after {outcome.replan_count} replans")
        self.outcome = outcome


@dataclass(frozen=True)
class ExecutionConfig:
    force_threshold: float = 40.0       # N
    max_replans: int = 50
    goal_radius_R: float = 0.05         # m
    total_time_budget: float = 400.0    # s of planning time
    rng_seed: int = 0
    servo: ServoParams = ServoParams()

    def __post_init__(self):
        if not self.force_threshold > 0:
            raise ValueError("force_threshold must be positive")
        if self.max_replans < 0:
            raise ValueError("max_replans must be >= 0")
        if not self.goal_radius_R > 0:
            raise ValueError("goal_radius_R must be positive")
        if not self.total_time_budget > 0:
            raise ValueError("total_time_budget must be positive")


@dataclass(frozen=True)
class LogStep:
    time: float
    position: tuple
    orientation: tuple
    force: Optional[tuple]
    magnitude: Optional[float]
    active_segment: int
    event: str = "none"


@dataclass
class ExecutionLog:
    steps: list = field(default_factory=list)

    def events(self, name: str) -> list:
        return [s for s in self.steps if s.event == name]

    def readings(self) -> list:
        """(ForceReading, segment) for every servo step."""
        return [(ForceReading(s.force, s.magnitude, s.time), s.active_segment)
                for s in self.steps if s.event in ("none", "threshold_violation")]

    def force_csv(self) -> str:
        return force_trace_csv(self.readings())


@dataclass
class ExecutionOutcome:
    success: bool
    final_offset: float
    replan_count: int
    executed_path_length: float
    peak_force_overall: float
    peak_force_final_segment: float
    elapsed: float
    log: ExecutionLog
    planning_time: float = 0.0
    paths: list = field(default_factory=list, repr=False)
    violated_paths: list = field(default_factory=list, repr=False)
    final_pose: Optional[WaypointPose] = None
    failure: str = ""

    @property
    def violations(self) -> int:
        return len(self.log.events("threshold_violation"))


def monitor(reading: ForceReading, config: ExecutionConfig) -> MonitorDecision:
    """Abort when any axis or the magnitude exceeds the threshold (strictly)."""
    lim = config.force_threshold
    if reading.magnitude > lim or any(abs(f) > lim for f in reading.force):
        return MonitorDecision.ABORT
    return MonitorDecision.CONTINUE


def _uniform_ball(rng, center, radius) -> np.ndarray:
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return np.asarray(center, float) + v * radius * rng.uniform() ** (1.0 / 3.0)


def select_new_goal(region: GoalRegion, tried: list, rng, attempts: int = 100) -> np.ndarray:
    """Uniform point in the region, kept radius_R/4 away from earlier goals when possible."""
    sep = region.radius_R / 4.0
    q = _uniform_ball(rng, region.center, region.radius_R)
    for _ in range(attempts):
        if all(np.linalg.norm(q - np.asarray(t, float)) >= sep for t in tried):
            return q
        q = _uniform_ball(rng, region.center, region.radius_R)
    return q


def execute(start: WaypointPose, region: GoalRegion, branch: SimBranch,
            constraint: BranchConstraint, planner_cfg: PlannerConfig,
            exec_cfg: ExecutionConfig, raise_on_exhausted: bool = False) -> ExecutionOutcome:
    t0 = time.perf_counter()
    servo = exec_cfg.servo
    R = exec_cfg.goal_radius_R
    center = np.array(region.center)
    plan_radius = R / 2.0
    subgoal_region = GoalRegion(region.center, max(plan_radius - servo.position_tol, 1e-6),
                                region.goal_orientation)
    params = branch.params
    clf = Classifier(params, branch.settings)
    sensor_rng = np.random.default_rng(mix_seed(branch.rng_seed, exec_cfg.rng_seed))
    goal_rng = np.random.default_rng(mix_seed(exec_cfg.rng_seed, 0x60A1))
    warm = WarmStart()
    log = ExecutionLog()
    state = EndEffectorState(start, 0.0)
    mon = (lambda r: monitor(r, exec_cfg))

    planning_time = 0.0
    paths: list = []
    violated: list = []
    tried: list = []
    replans = 0
    segment = 0
    peak_overall = 0.0
    peak_segment = 0.0
    failure = ""

    plans_made = 0

    def do_plan(pose, goal, prev):
        nonlocal planning_time, plans_made
        left = exec_cfg.total_time_budget - planning_time
        if left <= 0:
            raise PlanningTimeout("planning budget exhausted")
        cfg = replace(planner_cfg, time_budget=min(planner_cfg.time_budget, left),
                      rng_seed=mix_seed(planner_cfg.rng_seed, exec_cfg.rng_seed, plans_made))
        plans_made += 1
        t = time.perf_counter()
        try:
            return plan(pose, goal, constraint, params, cfg, prev_path=prev, classifier=clf)
        finally:
            planning_time += time.perf_counter() - t

    def record(st: EndEffectorState, reading: ForceReading, event: str = "none"):
        log.steps.append(LogStep(st.time, st.pose.position, st.pose.orientation, reading.force,
                                 reading.magnitude, segment, event))

    # the first plan is retried with fresh seeds while planning budget remains
    path: Optional[PlanPath] = None
    first_goal = GoalRegion(region.center, plan_radius, region.goal_orientation)
    while path is None:
        try:
            path = do_plan(start, first_goal, None)
        except PlanningTimeout as exc:
            failure = f"initial plan: {exc}"
            if planning_time >= exec_cfg.total_time_budget:
                break
        except InfeasibleStart as exc:
            failure = f"initial plan: {exc}"
            break

    success = False
    while path is not None:
        paths.append(path)
        peak_segment = 0.0
        try:
            for wp in path.waypoints[1:]:
                state, readings = run_segment(branch, state, wp, servo, mon, sensor_rng, warm,
                                              on_step=record)
                for r in readings:
                    peak_segment = max(peak_segment, r.magnitude)
            success = True
            break
        except AbortedByMonitor as ab:
            for r in ab.readings:
                peak_segment = max(peak_segment, r.magnitude)
            state = ab.state
            log.steps[-1] = replace(log.steps[-1], event="threshold_violation")
            violated.append(path)
        finally:
            peak_overall = max(peak_overall, peak_segment)
        # replanning from the abort pose, penalizing the violated path
        path = None
        while path is None:
            if replans >= exec_cfg.max_replans:
                failure = failure or "replan cap reached"
                break
            if planning_time >= exec_cfg.total_time_budget:
                failure = "planning budget exhausted"
                break
            replans += 1
            segment = replans
            last = log.steps[-1]
            log.steps.append(replace(last, event="replan_started", active_segment=segment))
            g = select_new_goal(subgoal_region, tried, goal_rng)
            tried.append(g)
            try:
                path = do_plan(state.pose, GoalRegion(tuple(g), plan_radius, region.goal_orientation),
                               violated[-1])
            except PlanningTimeout as exc:
                failure = f"replan {replans}: {exc}"
            except InfeasibleStart as exc:
                failure = f"replan {replans}: {exc}"
                break
        if path is not None:
            failure = ""

    final_offset = float(np.linalg.norm(state.pose.xyz - center))
    success = success and final_offset <= R
    if success:
        last = log.steps[-1] if log.steps else None
        force = last.force if last else (0.0, 0.0, 0.0)
        mag = last.magnitude if last else 0.0
        log.steps.append(LogStep(state.time, state.pose.position, state.pose.orientation, force,
                                 mag, segment, "goal_reached"))
    outcome = ExecutionOutcome(
        success=success, final_offset=final_offset, replan_count=replans,
        executed_path_length=_travelled(start, log), peak_force_overall=peak_overall,
        peak_force_final_segment=peak_segment, elapsed=time.perf_counter() - t0, log=log,
        planning_time=planning_time, paths=paths, violated_paths=violated,
        final_pose=state.pose, failure="" if success else (failure or "goal not reached"))
    if not success and raise_on_exhausted:
        raise Exhausted(outcome)
    return outcome


def _travelled(start: WaypointPose, log: ExecutionLog) -> float:
    prev = start.xyz
    total = 0.0
    for s in log.steps:
        p = np.array(s.position)
        total += float(np.linalg.norm(p - prev))
        prev = p
    return total
