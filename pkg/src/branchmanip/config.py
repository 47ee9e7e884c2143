"""Scenario configuration: YAML (or JSON) files with units in the field names.

Every section is a frozen dataclass whose field names are the file keys, so a
parsed file serializes back to the same keys and values. Unknown or missing
keys raise :class:`ConfigError` naming the offending field by its dotted path.
"""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dlo import BranchParams
from .executor import ExecutionConfig
from .geometry import PlaneFrame
from .planner import BranchConstraint, GoalRegion, PlannerConfig, WaypointPose
from .sim import Anomaly, ServoParams, SimBranch

IDENTITY_WXYZ = (1.0, 0.0, 0.0, 0.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnomalySection:
    center_m: tuple
    radius_m: float
    stiffness_multiplier: float

    def to_anomaly(self) -> Anomaly:
        return Anomaly(self.center_m, self.radius_m, self.stiffness_multiplier)


@dataclass(frozen=True)
class BranchSection:
    length_L_m: float
    flexural_rigidity_EI_Nm2: float
    base_angle_theta0_rad: float = math.pi / 2
    num_harmonics: int = 10
    quadrature_points: int = 200
    base_point_m: tuple = (0.0, 0.0, 0.0)
    plane_heading_xy: tuple = (1.0, 0.0)
    noise_sigma_N: float = 0.5
    k_plane_N_per_m: float = 50.0
    sensor_seed: int = 0
    anomalies: list = field(default_factory=list)

    def params(self) -> BranchParams:
        return BranchParams(self.length_L_m, self.flexural_rigidity_EI_Nm2,
                            self.base_angle_theta0_rad, self.num_harmonics,
                            self.quadrature_points)

    def frame(self) -> PlaneFrame:
        if math.hypot(*self.plane_heading_xy) == 0.0:
            raise ValueError("plane_heading_xy must be nonzero")
        return PlaneFrame.vertical(self.base_point_m, self.plane_heading_xy)

    def constraint(self) -> BranchConstraint:
        return BranchConstraint.for_branch(self.frame(), self.params())

    def sim_branch(self) -> SimBranch:
        return SimBranch.at_rest(self.params(), self.frame(),
                                 anomaly_field=tuple(a.to_anomaly() for a in self.anomalies),
                                 noise_sigma=self.noise_sigma_N, rng_seed=self.sensor_seed,
                                 k_plane=self.k_plane_N_per_m)


@dataclass(frozen=True)
class StartSection:
    position_m: tuple
    orientation_wxyz: tuple = IDENTITY_WXYZ

    def pose(self) -> WaypointPose:
        return WaypointPose(self.position_m, self.orientation_wxyz)


@dataclass(frozen=True)
class GoalSection:
    center_m: tuple
    radius_R_m: float = 0.05
    orientation_wxyz: tuple = IDENTITY_WXYZ

    def region(self) -> GoalRegion:
        return GoalRegion(self.center_m, self.radius_R_m, self.orientation_wxyz)


@dataclass(frozen=True)
class PlannerSection:
    max_iterations_N: int = 5000
    step_delta_q_m: float = 0.05
    neighbor_radius_m: Optional[float] = None
    goal_bias: float = 0.05
    rng_seed: int = 0
    penalty_epsilon_m: float = 1e-3
    penalty_radius_r_prime_m: float = 0.15
    penalty_weight: float = 0.5
    time_budget_s: float = 400.0

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(self.max_iterations_N, self.step_delta_q_m, self.neighbor_radius_m,
                             self.goal_bias, self.rng_seed, self.penalty_epsilon_m,
                             self.penalty_radius_r_prime_m, self.penalty_weight,
                             self.time_budget_s)


@dataclass(frozen=True)
class ServoSection:
    gain_kp_per_s: float = 2.0
    dt_s: float = 0.1
    position_tol_m: float = 2e-3
    angle_tol_rad: float = 0.01
    max_steps: int = 10_000

    def servo(self) -> ServoParams:
        return ServoParams(self.gain_kp_per_s, self.dt_s, self.position_tol_m,
                           self.angle_tol_rad, self.max_steps)


@dataclass(frozen=True)
class ExecutionSection:
    force_threshold_N: float = 40.0
    max_replans: int = 50
    total_time_budget_s: float = 400.0
    servo: ServoSection = ServoSection()

    def execution_config(self, goal_radius_R: float, rng_seed: int = 0) -> ExecutionConfig:
        return ExecutionConfig(self.force_threshold_N, self.max_replans, goal_radius_R,
                               self.total_time_budget_s, rng_seed, self.servo.servo())


@dataclass(frozen=True)
class ScenarioConfig:
    branch: BranchSection
    starts: list
    goal: GoalSection
    name: str = "scenario"
    base_seed: int = 0
    trials_per_start: int = 1
    planner: PlannerSection = PlannerSection()
    execution: ExecutionSection = ExecutionSection()

    def validate(self) -> "ScenarioConfig":
        """Build every domain object once so bad values surface as ConfigError."""
        if not self.starts:
            raise ConfigError("starts: at least one start is required")
        if self.trials_per_start < 1:
            raise ConfigError("trials_per_start: must be >= 1")
        checks = [("branch", lambda: (self.branch.params(), self.branch.sim_branch())),
                  ("goal", self.goal.region),
                  ("planner", self.planner.planner_config),
                  ("execution", lambda: self.execution.execution_config(self.goal.radius_R_m))]
        checks += [(f"starts[{i}]", s.pose) for i, s in enumerate(self.starts)]
        for path, build in checks:
            try:
                build()
            except ValueError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


# --------------------------------------------------------------------------
# generic (de)serialization


def _plain(v):
    """Tuples to lists, recursively, for YAML/JSON output."""
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


_LIST_ITEMS = {(BranchSection, "anomalies"): AnomalySection,
               (ScenarioConfig, "starts"): StartSection}
_VECTOR_LENGTHS = {"center_m": 3, "base_point_m": 3, "position_m": 3, "plane_heading_xy": 2,
                   "orientation_wxyz": 4}


def _number(v, path: str, kind):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"{path}: expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(float(v)):
        raise ConfigError(f"{path}: must be finite, got {v!r}")
    return float(v)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}{key}: unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        where = f"{path}{f.name}"
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"{where}: missing required field")
            continue
        v, hint = data[f.name], hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, v, where + ".")
        elif (cls, f.name) in _LIST_ITEMS:
            if not isinstance(v, list):
                raise ConfigError(f"{where}: expected a list")
            item = _LIST_ITEMS[(cls, f.name)]
            kwargs[f.name] = [_build(item, x, f"{where}[{i}].") for i, x in enumerate(v)]
        elif hint is tuple:
            if not isinstance(v, (list, tuple)) or len(v) != _VECTOR_LENGTHS[f.name]:
                raise ConfigError(f"{where}: expected {_VECTOR_LENGTHS[f.name]} numbers")
            kwargs[f.name] = tuple(_number(x, where, float) for x in v)
        elif hint is str:
            kwargs[f.name] = str(v)
        elif hint == Optional[float]:
            kwargs[f.name] = None if v is None else _number(v, where, float)
        else:
            kwargs[f.name] = _number(v, where, hint)
    return cls(**kwargs)


def scenario_from_dict(data) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "").validate()


def branch_from_dict(data) -> BranchSection:
    """The branch section alone, from either a full scenario or a bare section."""
    if isinstance(data, dict) and "branch" in data:
        data = data["branch"]
    sec = _build(BranchSection, data, "branch.")
    try:
        sec.params()
    except ValueError as exc:
        raise ConfigError(f"branch: {exc}") from None
    return sec


def parse_text(text: str, suffix: str = ".yaml"):
    try:
        if suffix.lower() == ".json":
            return json.loads(text)
        return yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None


def read_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_text(text, p.suffix)


def load_scenario(path) -> ScenarioConfig:
    return scenario_from_dict(read_config(path))


def dump_scenario(cfg: ScenarioConfig, fmt: str = "yaml") -> str:
    d = cfg.to_dict()
    if fmt == "json":
        return json.dumps(d, indent=2) + "\n"
    return yaml.safe_dump(d, sort_keys=False, default_flow_style=None)
