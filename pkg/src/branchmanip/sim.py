"""Simulated arm and wrist sensor holding the branch.

The end effector follows waypoints with a first-order task-space pose servo.
The force reading at the grasp is the reaction of the minimum-energy branch
(minus the gradient of the solved energy with respect to the grasp target),
scaled inside anomaly balls that stand in for snags the model cannot see.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dlo import (DEFAULT_SETTINGS, BranchParams, EndpointTarget, SolveFailed, SolverSettings,
                  Unreachable, solve_shape)
from .geometry import PlaneFrame, quat_angle, slerp
from .planner import WaypointPose

SENSOR_LIMIT = 300.0          # N per axis
FORCE_CSV_HEADER = ["time", "Fx", "Fy", "Fz", "magnitude", "segment_idx"]


class UnstableGain(ValueError):
    pass


class MonitorDecision(str, enum.Enum):
    CONTINUE = "continue"
    ABORT = "abort"


@dataclass(frozen=True)
class Anomaly:
    center: tuple
    radius: float
    stiffness_multiplier: float

    def __post_init__(self):
        if self.stiffness_multiplier < 1.0:
            raise ValueError("stiffness_multiplier must be >= 1")
        if not self.radius > 0:
            raise ValueError("anomaly radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    def contains(self, p) -> bool:
        return float(np.linalg.norm(np.asarray(p, float) - np.array(self.center))) <= self.radius


@dataclass(frozen=True)
class SimBranch:
    params: BranchParams
    plane_frame: PlaneFrame
    rest_grasp: WaypointPose
    anomaly_field: tuple = ()
    noise_sigma: float = 0.5
    rng_seed: int = 0
    k_plane: float = 50.0
    settings: SolverSettings = DEFAULT_SETTINGS

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        object.__setattr__(self, "anomaly_field", tuple(self.anomaly_field))

    @classmethod
    def at_rest(cls, params: BranchParams, plane_frame: PlaneFrame, **kw) -> "SimBranch":
        rest = WaypointPose(tuple(plane_frame.to_world(0.0, params.length_L)))
        return cls(params, plane_frame, rest, **kw)

    @property
    def base_point(self) -> tuple:
        return tuple(self.plane_frame.origin)

    def multiplier_at(self, p) -> float:
        m = 1.0
        for a in self.anomaly_field:
            if a.contains(p):
                m = max(m, a.stiffness_multiplier)
        return m

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


@dataclass
class WarmStart:
    """Caller-owned continuation state for consecutive force evaluations."""
    coefficients: Optional[np.ndarray] = None


@dataclass(frozen=True)
class EndEffectorState:
    pose: WaypointPose
    time: float = 0.0


@dataclass(frozen=True)
class ForceReading:
    force: tuple
    magnitude: float
    time: float = 0.0

    @classmethod
    def from_vector(cls, f, time: float = 0.0) -> "ForceReading":
        f = tuple(float(v) for v in f)
        return cls(f, math.sqrt(sum(v * v for v in f)), float(time))


@dataclass(frozen=True)
class ServoParams:
    gain_kp: float = 2.0          # 1/s
    dt: float = 0.1               # s; gain_kp * dt = 0.2
    position_tol: float = 2e-3    # m
    angle_tol: float = 0.01       # rad
    max_steps: int = 10_000

    def __post_init__(self):
        if not (self.dt > 0 and self.gain_kp > 0):
            raise ValueError("servo gain and dt must be positive")
        if self.gain_kp * self.dt > 1.0:
            raise UnstableGain(f"gain_kp*dt = {self.gain_kp * self.dt} exceeds 1")


class AbortedByMonitor(RuntimeError):
    def __init__(self, reading: ForceReading, state: EndEffectorState, readings: list):
        super().__init__(f"force monitor aborted at t={state.time:.2f}s, |F|={reading.magnitude:.1f} N")
        self.reading = reading
        self.state = state
        self.readings = readings


# --------------------------------------------------------------------------
# force oracle


def in_plane_reaction(branch: SimBranch, x: float, z: float,
                      warm: Optional[WarmStart] = None) -> np.ndarray:
    """(-dU/dx, -dU/dz) by central differences of the solved energy.

    An unloaded branch (zero solved energy) exerts no force. Near the reach
    limit, where one side of a difference cannot be solved, the one-sided
    difference is used; if neither side solves the error propagates.
    """
    params, settings = branch.params, branch.settings
    h = 1e-3 * params.length_L
    init = None if warm is None else warm.coefficients
    center = solve_shape(params, EndpointTarget(x, z), init=init, settings=settings)
    if warm is not None:
        warm.coefficients = center.coefficients
    if center.energy <= 1e-12 * params.flexural_rigidity_EI / params.length_L:
        return np.zeros(2)

    def energy(dx, dz):
        try:
            return solve_shape(params, EndpointTarget(x + dx, z + dz), init=center.coefficients,
                               settings=settings).energy
        except (Unreachable, SolveFailed):
            return None

    grad = np.empty(2)
    for k, (dx, dz) in enumerate(((h, 0.0), (0.0, h))):
        up, down = energy(dx, dz), energy(-dx, -dz)
        if up is not None and down is not None:
            grad[k] = (up - down) / (2 * h)
        elif up is not None:
            grad[k] = (up - center.energy) / h
        elif down is not None:
            grad[k] = (center.energy - down) / h
        else:
            raise SolveFailed("no finite difference could be formed around the grasp")
    return -grad


def _saturated(x: float, z: float, frame: PlaneFrame) -> np.ndarray:
    """Full-scale pull back toward the base for an over-stretched grasp."""
    r = math.hypot(x, z)
    d = frame.in_plane_vector(-x / r, -z / r) if r > 0 else -np.asarray(frame.z_axis, float)
    return d * (SENSOR_LIMIT / np.max(np.abs(d)))


def grasp_force(branch: SimBranch, grasp: WaypointPose, rng, time: float = 0.0,
                warm: Optional[WarmStart] = None) -> ForceReading:
    frame = branch.plane_frame
    x, z, y = frame.to_plane(grasp.position)
    try:
        fxz = in_plane_reaction(branch, x, z, warm) * branch.multiplier_at(grasp.position)
        f = frame.in_plane_vector(fxz[0], fxz[1], -branch.k_plane * y)
    except (Unreachable, SolveFailed):
        f = _saturated(x, z, frame)
    if branch.noise_sigma > 0:
        f = f + rng.normal(0.0, branch.noise_sigma, size=3)
    f = np.clip(f, -SENSOR_LIMIT, SENSOR_LIMIT)
    return ForceReading.from_vector(f, time)


# --------------------------------------------------------------------------
# servo


def pose_servo_step(state: EndEffectorState, target: WaypointPose, gain_kp: float,
                    dt: float) -> EndEffectorState:
    if not (dt > 0 and gain_kp > 0):
        raise ValueError("servo gain and dt must be positive")
    k = gain_kp * dt
    if k > 1.0:
        raise UnstableGain(f"gain_kp*dt = {k} exceeds 1")
    p = state.pose.xyz
    pos = p + k * (target.xyz - p)
    q = slerp(state.pose.quat, target.quat, min(1.0, k))
    return EndEffectorState(WaypointPose(tuple(pos), tuple(q)), state.time + dt)


def servo_converged(state: EndEffectorState, target: WaypointPose, servo: ServoParams) -> bool:
    return (float(np.linalg.norm(state.pose.xyz - target.xyz)) < servo.position_tol
            and quat_angle(state.pose.quat, target.quat) < servo.angle_tol)


def run_segment(branch: SimBranch, state: EndEffectorState, waypoint: WaypointPose,
                servo: ServoParams, monitor: Callable, rng,
                warm: Optional[WarmStart] = None, on_step: Optional[Callable] = None) -> tuple:
    """Servo to one waypoint, reading the force after every step.

    ``on_step(state, reading)`` sees every reading before the monitor does.
    """
    readings = []
    for _ in range(servo.max_steps):
        if servo_converged(state, waypoint, servo):
            return state, readings
        state = pose_servo_step(state, waypoint, servo.gain_kp, servo.dt)
        reading = grasp_force(branch, state.pose, rng, state.time, warm)
        readings.append(reading)
        if on_step is not None:
            on_step(state, reading)
        if monitor(reading) is MonitorDecision.ABORT:
            raise AbortedByMonitor(reading, state, readings)
    raise RuntimeError("servo did not converge within max_steps")


def force_trace_csv(rows) -> str:
    """rows: iterable of (ForceReading, segment_idx)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FORCE_CSV_HEADER)
    for r, seg in rows:
        w.writerow([repr(r.time), *map(repr, r.force), repr(r.magnitude), int(seg)])
    return buf.getvalue()


def never_abort(_reading) -> MonitorDecision:
    return MonitorDecision.CONTINUE
