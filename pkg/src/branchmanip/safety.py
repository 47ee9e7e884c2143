"""Safe / Caution / Risky zones for grasp-point targets in the branch plane."""

from __future__ import annotations

import csv
import enum
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dlo import (DEFAULT_SETTINGS, BranchParams, EndpointTarget, ShapeSolution,
                  SolveFailed, SolverSettings, Unreachable, solve_shape)
from .geometry import PlaneFrame


class SafetyLabel(str, enum.Enum):
    SAFE = "Safe"
    CAUTION = "Caution"
    RISKY = "Risky"
    UNKNOWN = "Unknown"   # only produced by map lookups, never by classification


CAUTION_TOLERANCE = 1e-3      # fraction of L
CLASSIFY_TIME_BUDGET = 0.2    # s per classification


def shape_loops(sol: ShapeSolution) -> bool:
    """True when the solved curve turns past half a revolution or crosses itself."""
    th = sol.theta
    if np.max(np.abs(th - th[0])) > math.pi:
        return True
    return polyline_self_intersects(sol.positions)


def polyline_self_intersects(pts: np.ndarray) -> bool:
    p = np.asarray(pts, dtype=float)
    a, b = p[:-1], p[1:]
    n = a.shape[0]
    if n < 3:
        return False
    d = b - a
    # if every segment direction lies within an open half-turn, projection on
    # the bisecting direction is strictly increasing and no crossing can exist
    ang = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    if ang.max() - ang.min() < math.pi - 1e-9:
        return False
    # all segment pairs (i, j) with j >= i + 2 (adjacent segments share a vertex)
    i, j = np.triu_indices(n, k=2)
    di, dj = d[i], d[j]
    denom = di[:, 0] * dj[:, 1] - di[:, 1] * dj[:, 0]
    r = a[j] - a[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (r[:, 0] * dj[:, 1] - r[:, 1] * dj[:, 0]) / denom
        u = (r[:, 0] * di[:, 1] - r[:, 1] * di[:, 0]) / denom
    hit = (np.abs(denom) > 1e-15) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return bool(np.any(hit))


def label_solution(params: BranchParams, sol: ShapeSolution,
                   caution_tolerance: float = CAUTION_TOLERANCE) -> SafetyLabel:
    if shape_loops(sol):
        return SafetyLabel.RISKY
    z = sol.positions[:, 1]
    if np.max(z[:-1]) > z[-1] + caution_tolerance * params.length_L:
        return SafetyLabel.CAUTION
    return SafetyLabel.SAFE


def classify_endpoint(params: BranchParams, target: EndpointTarget,
                      settings: SolverSettings = DEFAULT_SETTINGS,
                      time_budget: Optional[float] = CLASSIFY_TIME_BUDGET) -> SafetyLabel:
    """Label a grasp-point target; every failure mode maps to Risky."""
    return _classify(params, target, settings, time_budget)[0]


def _classify(params, target, settings, time_budget):
    L = params.length_L
    if not (math.isfinite(target.x_desired) and math.isfinite(target.z_desired)):
        return SafetyLabel.RISKY, None
    if target.norm > L * (1.0 + settings.reachability_slack):
        return SafetyLabel.RISKY, None
    deadline = None if time_budget is None else time.perf_counter() + time_budget
    try:
        sol = solve_shape(params, target, settings=settings, deadline=deadline)
    except (Unreachable, SolveFailed):
        return SafetyLabel.RISKY, None
    return label_solution(params, sol), sol


class Classifier:
    """Memoizing wrapper around :func:`classify_endpoint`.

    Results depend only on the queried point, so a cache may be shared by
    several planner runs without affecting their determinism.
    """

    def __init__(self, params: BranchParams, settings: SolverSettings = DEFAULT_SETTINGS,
                 time_budget: Optional[float] = CLASSIFY_TIME_BUDGET):
        self.params = params
        self.settings = settings
        self.time_budget = time_budget
        self._cache: dict = {}
        self.calls = 0

    def __call__(self, x: float, z: float) -> SafetyLabel:
        key = (float(x), float(z))
        hit = self._cache.get(key)
        if hit is None:
            self.calls += 1
            hit = classify_endpoint(self.params, EndpointTarget(*key), self.settings,
                                    self.time_budget)
            self._cache[key] = hit
        return hit


# --------------------------------------------------------------------------
# maps


@dataclass(frozen=True)
class RandomMode:
    count: int
    seed: int
    radius_factor: float = 1.1

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("random mode needs count >= 1")


@dataclass(frozen=True)
class GridMode:
    bounds: tuple        # (xmin, xmax, zmin, zmax) in meters
    resolution: float

    def __post_init__(self):
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError("grid resolution must be positive")
        xmin, xmax, zmin, zmax = self.bounds
        if not (xmax > xmin and zmax > zmin):
            raise ValueError("grid bounds must be increasing")


@dataclass
class LabelGrid:
    bounds: tuple
    resolution: float
    labels: np.ndarray   # (nx, nz) array of SafetyLabel

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    def centers(self):
        xmin, _, zmin, _ = self.bounds
        nx, nz = self.shape
        xs = xmin + (np.arange(nx) + 0.5) * self.resolution
        zs = zmin + (np.arange(nz) + 0.5) * self.resolution
        return xs, zs

    def cell_of(self, x: float, z: float) -> Optional[tuple]:
        """Index of the cell containing (x, z); cells are (lo, hi] so points on
        a shared edge belong to the lower-index cell."""
        xmin, _, zmin, _ = self.bounds
        nx, nz = self.shape
        fi = round((x - xmin) / self.resolution, 9)
        fj = round((z - zmin) / self.resolution, 9)
        i = max(int(math.ceil(fi)) - 1, 0) if fi >= 0 else -1
        j = max(int(math.ceil(fj)) - 1, 0) if fj >= 0 else -1
        if 0 <= i < nx and 0 <= j < nz:
            return i, j
        return None


@dataclass
class SafetyMap:
    params: BranchParams
    plane_frame: Optional[PlaneFrame]
    samples: list                 # [(x, z, SafetyLabel)]
    grid: Optional[LabelGrid] = None
    lookup_radius: float = 0.0
    mode: dict = field(default_factory=dict)

    def counts(self) -> dict:
        out = {lab.value: 0 for lab in (SafetyLabel.SAFE, SafetyLabel.CAUTION, SafetyLabel.RISKY)}
        for _, _, lab in self.samples:
            out[lab.value] += 1
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "z", "label"])
        for x, z, lab in self.samples:
            w.writerow([repr(float(x)), repr(float(z)), lab.value])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {
            "length_L_m": self.params.length_L,
            "mode": self.mode,
            "plane_frame": self.plane_frame.to_dict() if self.plane_frame else None,
            "counts": self.counts(),
            "samples": [{"x_m": float(x), "z_m": float(z), "label": lab.value}
                        for x, z, lab in self.samples],
        }
        if self.grid is not None:
            d["grid"] = {"bounds_m": list(self.grid.bounds),
                         "resolution_m": self.grid.resolution,
                         "labels": [[lab.value for lab in row] for row in self.grid.labels]}
        return d


def random_targets(params: BranchParams, mode: RandomMode) -> np.ndarray:
    rng = np.random.default_rng(mode.seed)
    r = mode.radius_factor * params.length_L * np.sqrt(rng.uniform(size=mode.count))
    ang = rng.uniform(0.0, 2.0 * math.pi, size=mode.count)
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def build_safety_map(params: BranchParams, mode, plane_frame: Optional[PlaneFrame] = None,
                     settings: SolverSettings = DEFAULT_SETTINGS,
                     time_budget: Optional[float] = CLASSIFY_TIME_BUDGET,
                     jobs: int = 1) -> SafetyMap:
    """Classify sampled targets (random disk samples or grid cell centers)."""
    if isinstance(mode, RandomMode):
        pts = random_targets(params, mode)
        grid_shape = None
        mode_desc = {"kind": "random", "count": mode.count, "seed": mode.seed}
    elif isinstance(mode, GridMode):
        xmin, xmax, zmin, zmax = mode.bounds
        nx = max(1, int(round((xmax - xmin) / mode.resolution)))
        nz = max(1, int(round((zmax - zmin) / mode.resolution)))
        xs = xmin + (np.arange(nx) + 0.5) * mode.resolution
        zs = zmin + (np.arange(nz) + 0.5) * mode.resolution
        X, Z = np.meshgrid(xs, zs, indexing="ij")
        pts = np.column_stack([X.ravel(), Z.ravel()])
        grid_shape = (nx, nz)
        mode_desc = {"kind": "grid", "bounds_m": list(mode.bounds),
                     "resolution_m": mode.resolution}
    else:
        raise TypeError(f"unsupported map mode {mode!r}")

    labels = _classify_all(params, pts, settings, time_budget, jobs)
    samples = [(float(x), float(z), lab) for (x, z), lab in zip(pts, labels)]
    grid = None
    if grid_shape is not None:
        arr = np.empty(grid_shape, dtype=object)
        arr.ravel()[:] = labels
        grid = LabelGrid(tuple(float(b) for b in mode.bounds), float(mode.resolution), arr)
        radius = float(mode.resolution)
    else:
        radius = params.length_L / 20.0
    return SafetyMap(params, plane_frame, samples, grid, radius, mode_desc)


def _classify_points(args):
    params, pts, settings, time_budget = args
    return [classify_endpoint(params, EndpointTarget(float(x), float(z)), settings, time_budget)
            for x, z in pts]


def _classify_all(params, pts, settings, time_budget, jobs):
    if jobs <= 1 or len(pts) < 2 * jobs:
        return _classify_points((params, pts, settings, time_budget))
    from concurrent.futures import ProcessPoolExecutor
    chunks = np.array_split(np.asarray(pts), jobs)
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        parts = list(ex.map(_classify_points,
                            [(params, c, settings, time_budget) for c in chunks]))
    return [lab for part in parts for lab in part]


def query(smap: SafetyMap, point) -> SafetyLabel:
    x, z = float(point[0]), float(point[1])
    if smap.grid is not None:
        cell = smap.grid.cell_of(x, z)
        if cell is None:
            return SafetyLabel.UNKNOWN
        return smap.grid.labels[cell]
    if not smap.samples:
        return SafetyLabel.UNKNOWN
    arr = np.array([(sx, sz) for sx, sz, _ in smap.samples])
    d = np.hypot(arr[:, 0] - x, arr[:, 1] - z)
    k = int(np.argmin(d))
    if d[k] <= smap.lookup_radius:
        return smap.samples[k][2]
    return SafetyLabel.UNKNOWN


def read_map_csv(text: str, params: BranchParams) -> SafetyMap:
    rows = list(csv.DictReader(io.StringIO(text)))
    samples = [(float(r["x"]), float(r["z"]), SafetyLabel(r["label"])) for r in rows]
    return SafetyMap(params, None, samples, None, params.length_L / 20.0, {"kind": "csv"})
