"""Task-space RRT* constrained by the branch model.

Samples live in the upper half-ball around the branch base; every new node,
and points along every new edge, must project onto a Safe grasp target in
the branch plane. Replans add an inverse-distance penalty to nodes close to
the previously violated path so the new path moves away from it.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dlo import DEFAULT_SETTINGS, BranchParams, SolverSettings
from .geometry import PlaneFrame, as_unit_quaternion, slerp
from .safety import CLASSIFY_TIME_BUDGET, Classifier, SafetyLabel

IDENTITY = (1.0, 0.0, 0.0, 0.0)
PATH_CSV_HEADER = ["idx", "x", "y", "z", "qw", "qx", "qy", "qz", "cum_length"]


class PlanningTimeout(RuntimeError):
    """No goal-reaching node within the iteration cap or the time budget."""


class InfeasibleStart(ValueError):
    """Start pose or goal region violates the planner preconditions."""


class ZeroDirection(ValueError):
    pass


# --------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class WaypointPose:
    position: tuple
    orientation: tuple = IDENTITY

    def __post_init__(self):
        p = tuple(float(v) for v in self.position)
        if len(p) != 3 or not all(math.isfinite(v) for v in p):
            raise ValueError(f"position must be three finite numbers, got {self.position!r}")
        q = as_unit_quaternion(self.orientation)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", tuple(float(v) for v in q))

    @property
    def xyz(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def quat(self) -> np.ndarray:
        return np.array(self.orientation)


@dataclass(frozen=True)
class GoalRegion:
    center: tuple
    radius_R: float
    goal_orientation: tuple = IDENTITY

    def __post_init__(self):
        if not (self.radius_R > 0 and math.isfinite(self.radius_R)):
            raise ValueError("goal radius_R must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        q = as_unit_quaternion(self.goal_orientation)
        object.__setattr__(self, "goal_orientation", tuple(float(v) for v in q))

    def contains(self, p) -> bool:
        return float(np.linalg.norm(np.asarray(p, float) - np.array(self.center))) <= self.radius_R


@dataclass(frozen=True)
class PlannerConfig:
    max_iterations_N: int = 5000
    step_delta_q: float = 0.05
    neighbor_radius: Optional[float] = None   # None: shrinking RRT* radius
    goal_bias: float = 0.05
    rng_seed: int = 0
    penalty_epsilon: float = 1e-3
    penalty_radius_r_prime: float = 0.15
    penalty_weight: float = 0.5
    time_budget: float = 400.0

    def __post_init__(self):
        if not self.step_delta_q > 0:
            raise ValueError("step_delta_q must be positive")
        if not 0.0 <= self.goal_bias <= 0.2:
            raise ValueError("goal_bias must lie in [0, 0.2]")
        if not self.penalty_epsilon > 0:
            raise ValueError("penalty_epsilon must be positive")
        if not self.time_budget > 0:
            raise ValueError("time_budget must be positive")
        if self.max_iterations_N < 1:
            raise ValueError("max_iterations_N must be >= 1")
        if self.penalty_weight < 0 or self.penalty_radius_r_prime < 0:
            raise ValueError("penalty weight and radius must be nonnegative")
        if self.neighbor_radius is not None and not self.neighbor_radius > 0:
            raise ValueError("neighbor_radius must be positive when given")


@dataclass(frozen=True)
class BranchConstraint:
    base_point: tuple
    height_h: float
    plane_frame: PlaneFrame

    def __post_init__(self):
        if not self.height_h > 0:
            raise ValueError("height_h must be positive")
        object.__setattr__(self, "base_point", tuple(float(v) for v in self.base_point))

    @classmethod
    def for_branch(cls, frame: PlaneFrame, params: BranchParams) -> "BranchConstraint":
        """Half-ball of radius L (the branch height at rest) around the base."""
        return cls(tuple(frame.origin), params.length_L, frame)

    def satisfied(self, q, tol: float = 1e-12) -> bool:
        d = np.asarray(q, float) - np.array(self.base_point)
        return bool(np.linalg.norm(d) <= self.height_h + tol and d[2] >= -tol)


@dataclass
class PlanTree:
    positions: np.ndarray                  # (capacity, 3), rows [0, size) in use
    parents: list
    costs: list
    penalties: list
    children: list
    root: int = 0

    @classmethod
    def with_root(cls, position, capacity: int) -> "PlanTree":
        pos = np.empty((capacity, 3))
        pos[0] = position
        return cls(pos, [None], [0.0], [0.0], [[]])

    @property
    def size(self) -> int:
        return len(self.parents)

    def add(self, position, parent: int, penalty: float) -> int:
        i = self.size
        if i == self.positions.shape[0]:
            self.positions = np.vstack([self.positions, np.empty_like(self.positions)])
        self.positions[i] = position
        self.parents.append(parent)
        self.penalties.append(penalty)
        self.costs.append(self.costs[parent] + self.edge(parent, i) + penalty)
        self.children.append([])
        self.children[parent].append(i)
        return i

    def edge(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.positions[i] - self.positions[j]))

    def reparent(self, i: int, new_parent: int) -> None:
        old = self.parents[i]
        self.children[old].remove(i)
        self.children[new_parent].append(i)
        self.parents[i] = new_parent
        new_cost = self.costs[new_parent] + self.edge(new_parent, i) + self.penalties[i]
        delta = new_cost - self.costs[i]
        stack = [i]
        while stack:
            k = stack.pop()
            self.costs[k] += delta
            stack.extend(self.children[k])

    def recomputed_cost(self, i: int) -> float:
        total = 0.0
        while self.parents[i] is not None:
            p = self.parents[i]
            total += self.edge(p, i) + self.penalties[i]
            i = p
        return total

    def path_to(self, i: int) -> list:
        chain = []
        while i is not None:
            chain.append(i)
            i = self.parents[i]
        return chain[::-1]


@dataclass
class PlanPath:
    waypoints: list
    total_length: float
    final_offset: float
    planning_time: float = 0.0
    iterations_used: int = 0
    cost: float = 0.0
    cost_history: list = field(default_factory=list, repr=False)
    penalized_nodes: int = 0
    tree: Optional[PlanTree] = field(default=None, repr=False, compare=False)

    @property
    def positions(self) -> np.ndarray:
        return np.array([w.position for w in self.waypoints])

    def cumulative_lengths(self) -> np.ndarray:
        p = self.positions
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1) if len(p) > 1 else np.zeros(0)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PATH_CSV_HEADER)
        for i, (wp, c) in enumerate(zip(self.waypoints, self.cumulative_lengths())):
            w.writerow([i, *map(repr, wp.position), *map(repr, wp.orientation), repr(float(c))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"waypoints": [{"position_m": list(w.position), "orientation_wxyz": list(w.orientation)}
                              for w in self.waypoints],
                "total_length_m": self.total_length, "final_offset_m": self.final_offset,
                "planning_time_s": self.planning_time, "iterations_used": self.iterations_used,
                "cost": self.cost}


def path_from_positions(positions, goal: GoalRegion, q_start=IDENTITY, **extra) -> PlanPath:
    pts = np.asarray(positions, float).reshape(-1, 3)
    wps = [WaypointPose(tuple(p)) for p in pts]
    length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))) if len(pts) > 1 else 0.0
    offset = float(np.linalg.norm(pts[-1] - np.array(goal.center)))
    path = PlanPath(wps, length, offset, **extra)
    return interpolate_orientations(path, q_start, goal.goal_orientation)


# --------------------------------------------------------------------------
# operations


def _uniform_ball(rng, radius: float) -> np.ndarray:
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * radius * rng.uniform() ** (1.0 / 3.0)


def sample_constrained(constraint: BranchConstraint, goal: GoalRegion, config: PlannerConfig,
                       rng) -> np.ndarray:
    """Goal-ball sample with probability goal_bias, else uniform in the half-ball."""
    base = np.array(constraint.base_point)
    h = constraint.height_h
    if rng.uniform() < config.goal_bias:
        for _ in range(100):
            q = np.array(goal.center) + _uniform_ball(rng, goal.radius_R)
            if constraint.satisfied(q):
                return q
    while True:
        d = rng.uniform([-h, -h, 0.0], [h, h, h])
        if d @ d <= h * h:
            return base + d


def steer(q_near, q_rand, delta_q: float) -> np.ndarray:
    q_near = np.asarray(q_near, float)
    d = np.asarray(q_rand, float) - q_near
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise ZeroDirection("cannot steer toward the same point")
    if n <= delta_q:
        return np.asarray(q_rand, float).copy()
    return q_near + (delta_q / n) * d


def plane_target(q, constraint: BranchConstraint) -> tuple:
    x, z, _ = constraint.plane_frame.to_plane(q)
    return x, z


def safety_gate(q_new, constraint: BranchConstraint, params: BranchParams,
                classifier: Optional[Classifier] = None,
                settings: SolverSettings = DEFAULT_SETTINGS) -> bool:
    """True iff the in-plane projection of q_new is a Safe grasp target."""
    clf = classifier if classifier is not None else Classifier(params, settings)
    return clf(*plane_target(q_new, constraint)) is SafetyLabel.SAFE


def min_distance(q, prev_path: PlanPath) -> float:
    return float(np.min(np.linalg.norm(prev_path.positions - np.asarray(q, float), axis=1)))


def penalty_cost(q, prev_path: Optional[PlanPath], config: PlannerConfig) -> float:
    if prev_path is None or not prev_path.waypoints:
        return 0.0
    d = min_distance(q, prev_path)
    if d > config.penalty_radius_r_prime:
        return 0.0
    return config.penalty_weight / (d + config.penalty_epsilon)


def neighbor_radius(config: PlannerConfig, constraint: BranchConstraint, n: int) -> float:
    if config.neighbor_radius is not None:
        return config.neighbor_radius
    # gamma from the RRT* bound in 3-D with the half-ball as free volume
    free = (2.0 / 3.0) * math.pi * constraint.height_h ** 3
    unit = (4.0 / 3.0) * math.pi
    gamma = 2.0 * (1.0 + 1.0 / 3.0) ** (1.0 / 3.0) * (free / unit) ** (1.0 / 3.0)
    n = max(n, 2)
    return min(gamma * (math.log(n) / n) ** (1.0 / 3.0), 4.0 * config.step_delta_q)


def interpolate_orientations(path: PlanPath, q_start, q_goal) -> PlanPath:
    """Attach SLERP orientations spread by arc length along the path."""
    qs = as_unit_quaternion(q_start)
    qg = as_unit_quaternion(q_goal)
    if not path.waypoints:
        raise ValueError("path has no waypoints")
    cum = path.cumulative_lengths()
    total = cum[-1]
    if total > 0:
        ts = cum / total
    else:
        ts = np.ones(len(cum))   # a lone waypoint takes the goal orientation
    quats = [slerp(qs, qg, float(t)) for t in ts]
    if total > 0:
        quats[0] = qs
    quats[-1] = qg
    wps = [WaypointPose(w.position, tuple(q)) for w, q in zip(path.waypoints, quats)]
    return replace(path, waypoints=wps)


class _EdgeChecker:
    """Gate interior points of an edge every step_delta_q / 2; results cached."""

    def __init__(self, tree: PlanTree, gate, spacing: float):
        self.tree = tree
        self.gate = gate
        self.spacing = spacing
        self.cache: dict = {}

    def __call__(self, i: int, j: int) -> bool:
        key = (i, j) if i < j else (j, i)
        hit = self.cache.get(key)
        if hit is None:
            a, b = self.tree.positions[i], self.tree.positions[j]
            m = int(math.ceil(np.linalg.norm(b - a) / self.spacing - 1e-9))
            hit = all(self.gate(a + (k / m) * (b - a)) for k in range(1, m))
            self.cache[key] = hit
        return hit

    def forget(self, i: int) -> None:
        """Drop results for a node index that was staged but not inserted."""
        self.cache = {k: v for k, v in self.cache.items() if i not in k}


def plan(start: WaypointPose, goal: GoalRegion, constraint: BranchConstraint, params: BranchParams,
         config: PlannerConfig, prev_path: Optional[PlanPath] = None,
         classifier: Optional[Classifier] = None,
         settings: SolverSettings = DEFAULT_SETTINGS) -> PlanPath:
    """RRT* from ``start`` into ``goal`` under the branch constraints."""
    t0 = time.perf_counter()
    clf = classifier if classifier is not None else Classifier(params, settings, CLASSIFY_TIME_BUDGET)

    def gate(q) -> bool:
        return clf(*plane_target(q, constraint)) is SafetyLabel.SAFE

    q_start = start.xyz
    base = np.array(constraint.base_point)
    if not constraint.satisfied(q_start):
        raise InfeasibleStart("start lies outside the branch half-ball")
    if not gate(q_start):
        raise InfeasibleStart("start projects to a non-Safe grasp target")
    c = np.array(goal.center)
    if (np.linalg.norm(c - base) > constraint.height_h + goal.radius_R
            or c[2] + goal.radius_R < base[2]):
        raise InfeasibleStart("goal region does not meet the branch half-ball")

    if goal.contains(q_start):
        return path_from_positions([q_start], goal, start.orientation,
                                   planning_time=time.perf_counter() - t0)

    rng = np.random.default_rng(config.rng_seed)
    tree = PlanTree.with_root(q_start, config.max_iterations_N + 2)
    edge_ok = _EdgeChecker(tree, gate, config.step_delta_q / 2.0)
    goal_nodes: list = []
    history: list = []
    stats = {"penalized": 0}

    def insert(q_new, nearest):
        """Gate, choose parent, add and rewire; returns the node index or None."""
        if not constraint.satisfied(q_new) or not gate(q_new):
            return None
        pts = tree.positions[:tree.size]
        r = neighbor_radius(config, constraint, tree.size)
        dn = np.linalg.norm(pts - q_new, axis=1)
        near = [int(k) for k in np.flatnonzero(dn <= r)]
        if nearest not in near:
            near.append(nearest)
        new = tree.size
        tree.positions[new] = q_new   # staged so the edge checker can read it
        parent = next((k for k in sorted(near, key=lambda k: (tree.costs[k] + dn[k], k))
                       if edge_ok(k, new)), None)
        if parent is None:
            edge_ok.forget(new)
            return None
        pen = penalty_cost(q_new, prev_path, config)
        tree.add(q_new, parent, pen)
        if pen > 0:
            stats["penalized"] += 1
        for k in sorted(near):
            if k == parent or k == tree.root:
                continue
            through = tree.costs[new] + dn[k] + tree.penalties[k]
            if (through < tree.costs[k] - 1e-12 and not _is_ancestor(tree, k, new)
                    and edge_ok(new, k)):
                tree.reparent(k, new)
        if goal.contains(q_new):
            goal_nodes.append(new)
        return new

    best = math.inf
    it = 0
    for it in range(1, config.max_iterations_N + 1):
        if time.perf_counter() - t0 > config.time_budget:
            it -= 1
            break
        q_rand = sample_constrained(constraint, goal, config, rng)
        d = np.linalg.norm(tree.positions[:tree.size] - q_rand, axis=1)
        nearest = int(np.argmin(d))
        if d[nearest] > 0.0:
            insert(steer(tree.positions[nearest], q_rand, config.step_delta_q), nearest)
        if goal_nodes:
            best = min(tree.costs[g] for g in goal_nodes)
        history.append(best)

    elapsed = time.perf_counter() - t0
    if not goal_nodes:
        raise PlanningTimeout(f"no goal-reaching node after {it} iterations ({elapsed:.1f} s)")
    g = min(goal_nodes, key=lambda k: (tree.costs[k], k))
    # snap the path onto the goal center when that last short edge is Safe
    if float(np.linalg.norm(tree.positions[g] - c)) > 0.0 and gate(c):
        tree.positions[tree.size] = c
        if edge_ok(g, tree.size):
            g = tree.add(c, g, penalty_cost(c, prev_path, config))
    idx = tree.path_to(g)
    return path_from_positions(tree.positions[idx], goal, start.orientation,
                               planning_time=elapsed, iterations_used=it, cost=tree.costs[g],
                               cost_history=history, penalized_nodes=stats["penalized"],
                               tree=tree)


def _is_ancestor(tree: PlanTree, a: int, b: int) -> bool:
    """True when node a lies on the parent chain of node b."""
    k = b
    while k is not None:
        if k == a:
            return True
        k = tree.parents[k]
    return False
