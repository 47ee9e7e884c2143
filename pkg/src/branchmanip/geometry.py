"""Frames and unit-quaternion helpers shared by the planner and simulator.

Quaternions are stored as numpy arrays in (w, x, y, z) order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NonUnitQuaternion(ValueError):
    pass


UNIT_TOL = 1e-9


def as_unit_quaternion(q, tol: float = UNIT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise NonUnitQuaternion(f"quaternion must have 4 components, got shape {q.shape}")
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > tol:
        raise NonUnitQuaternion(f"quaternion norm {n!r} is not 1")
    return q


def quat_mul(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])


def quat_angle(a, b) -> float:
    """Rotation angle (rad, in [0, pi]) taking orientation a to b.

    atan2 of the relative rotation keeps full precision for small angles,
    where acos of the dot product would not.
    """
    rel = quat_mul(quat_conj(np.asarray(a, float)), np.asarray(b, float))
    return 2.0 * math.atan2(float(np.linalg.norm(rel[1:])), abs(float(rel[0])))


def slerp(q1, q2, t: float, tol: float = 1e-6) -> np.ndarray:
    """Spherical linear interpolation between unit quaternions.

    The shorter arc is taken (q2 is negated when the dot product is
    negative); for angles below ``tol`` normalized lerp is used.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    cos_g = float(np.dot(q1, q2))
    if cos_g < 0.0:
        q2, cos_g = -q2, -cos_g
    cos_g = min(1.0, cos_g)
    gamma = math.acos(cos_g)
    if gamma < tol:
        q = (1.0 - t) * q1 + t * q2
        return q / np.linalg.norm(q)
    sg = math.sin(gamma)
    q = (math.sin((1.0 - t) * gamma) / sg) * q1 + (math.sin(t * gamma) / sg) * q2
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class PlaneFrame:
    """Vertical-ish plane containing the branch.

    ``origin`` is the branch base in world coordinates; ``x_axis`` and
    ``z_axis`` span the plane (local x and z); ``y_axis`` = z_axis x x_axis is
    the out-of-plane normal.
    """

    origin: tuple
    x_axis: tuple = (1.0, 0.0, 0.0)
    z_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        x = np.asarray(self.x_axis, float)
        z = np.asarray(self.z_axis, float)
        if (abs(np.linalg.norm(x) - 1) > 1e-9 or abs(np.linalg.norm(z) - 1) > 1e-9
                or abs(x @ z) > 1e-9):
            raise ValueError("plane frame axes must be orthonormal")

    @classmethod
    def vertical(cls, origin, heading) -> "PlaneFrame":
        """Vertical plane through ``origin`` whose local x follows ``heading``."""
        h = np.array([heading[0], heading[1], 0.0], dtype=float)
        h /= np.linalg.norm(h)
        return cls(tuple(float(v) for v in origin), tuple(float(v) for v in h),
                   (0.0, 0.0, 1.0))

    @property
    def y_axis(self) -> np.ndarray:
        return np.cross(np.asarray(self.z_axis, float), np.asarray(self.x_axis, float))

    def to_plane(self, p) -> tuple:
        """World point -> (x, z, out_of_plane) in the branch frame."""
        d = np.asarray(p, dtype=float) - np.asarray(self.origin, float)
        return (float(d @ np.asarray(self.x_axis, float)),
                float(d @ np.asarray(self.z_axis, float)),
                float(d @ self.y_axis))

    def to_world(self, x: float, z: float, y: float = 0.0) -> np.ndarray:
        return (np.asarray(self.origin, float) + x * np.asarray(self.x_axis, float)
                + z * np.asarray(self.z_axis, float) + y * self.y_axis)

    def in_plane_vector(self, fx: float, fz: float, fy: float = 0.0) -> np.ndarray:
        return (fx * np.asarray(self.x_axis, float) + fz * np.asarray(self.z_axis, float)
                + fy * self.y_axis)

    def to_dict(self) -> dict:
        return {"origin_m": list(self.origin), "x_axis": list(self.x_axis),
                "z_axis": list(self.z_axis)}

    @classmethod
    def from_dict(cls, d: dict) -> "PlaneFrame":
        return cls(tuple(map(float, d["origin_m"])),
                   tuple(map(float, d.get("x_axis", (1.0, 0.0, 0.0)))),
                   tuple(map(float, d.get("z_axis", (0.0, 0.0, 1.0)))))
