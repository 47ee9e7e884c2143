"""Planar minimum-bending-energy model of a flexible branch.

The branch is a curve of fixed arc length ``L`` clamped at the local origin.
Its tangent angle (measured from +x) is expanded in a small basis

    theta(s) = a1 + a2*s + sum_i a_{2i+1} sin(2 pi i s/L) + a_{2i+2} cos(2 pi i s/L)

and the shape for a given grasp-point target is the coefficient vector that
minimizes the bending energy 0.5*EI*int (dtheta/ds)^2 ds subject to the
base-angle, endpoint-position and (optionally) tip-angle constraints.

Everything is discretized on a uniform grid of ``quadrature_points`` intervals
and integrated with composite Simpson, so the discretized energy is an exact
quadratic form in the coefficients and the two endpoint constraints are smooth
trigonometric sums with closed-form derivatives.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class InvalidBasisIndex(IndexError):
    pass


class Unreachable(ValueError):
    """Target lies outside the disk the branch can reach."""


class SolveFailed(RuntimeError):
    """Solver stopped without satisfying the endpoint constraints."""


class SolveTimeout(SolveFailed):
    pass


@dataclass(frozen=True)
class BranchParams:
    length_L: float = 0.6
    flexural_rigidity_EI: float = 0.5
    base_angle_theta0: float = math.pi / 2
    num_harmonics: int = 10
    quadrature_points: int = 200

    def __post_init__(self):
        if not (self.length_L > 0 and math.isfinite(self.length_L)):
            raise ValueError(f"length_L must be positive, got {self.length_L}")
        if not (self.flexural_rigidity_EI > 0 and math.isfinite(self.flexural_rigidity_EI)):
            raise ValueError(
                f"flexural_rigidity_EI must be positive, got {self.flexural_rigidity_EI}")
        if self.num_harmonics < 1:
            raise ValueError(f"num_harmonics must be >= 1, got {self.num_harmonics}")
        if self.quadrature_points < 10 or self.quadrature_points % 2:
            raise ValueError(
                f"quadrature_points must be even and >= 10, got {self.quadrature_points}")

    @property
    def basis_size(self) -> int:
        return 2 * self.num_harmonics + 2

    def s_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.length_L, self.quadrature_points + 1)


@dataclass(frozen=True)
class EndpointTarget:
    x_desired: float
    z_desired: float
    tip_angle_theta2: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.x_desired) and math.isfinite(self.z_desired)):
            raise ValueError("endpoint target must be finite")
        t = self.tip_angle_theta2
        if t is not None and not (-math.pi < t <= math.pi):
            raise ValueError(f"tip angle must lie in (-pi, pi], got {t}")

    @property
    def norm(self) -> float:
        return math.hypot(self.x_desired, self.z_desired)


@dataclass(frozen=True)
class SolverSettings:
    position_tolerance: float = 1e-3   # fraction of L
    angle_tolerance: float = 1e-2      # rad
    opt_tolerance: float = 1e-6        # dimensionless KKT norm
    feasibility_tolerance: float = 1e-9  # fraction of L; tight so energy differences stay smooth
    reachability_slack: float = 1e-3
    max_outer: int = 8
    max_inner: int = 500
    penalty_init: float = 1e3
    penalty_growth: float = 10.0


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class ShapeSolution:
    coefficients: np.ndarray
    s_grid: np.ndarray
    theta: np.ndarray
    positions: np.ndarray          # (n, 2) columns x, z
    energy: float
    endpoint_residual: float
    angle_residuals: tuple
    converged: bool
    iterations: int
    # endpoint multipliers in physical units (N); equal to -dU*/d(target)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(2))
    optimality: float = float("nan")

    @property
    def endpoint(self) -> np.ndarray:
        return self.positions[-1]


# --------------------------------------------------------------------------
# basis and quadrature


def _check_index(params: BranchParams, index: int) -> None:
    if not (1 <= index <= params.basis_size):
        raise InvalidBasisIndex(
            f"basis index {index} outside 1..{params.basis_size}")


def basis_eval(params: BranchParams, index: int, s):
    """Evaluate basis function ``e_index`` (1-based) at arc length ``s``."""
    _check_index(params, index)
    s = np.asarray(s, dtype=float)
    L = params.length_L
    if index == 1:
        out = np.ones_like(s)
    elif index == 2:
        out = s.copy()
    else:
        i = (index - 1) // 2
        arg = 2.0 * math.pi * i * s / L
        out = np.sin(arg) if index % 2 == 1 else np.cos(arg)
    return float(out) if out.ndim == 0 else out


def basis_matrix(params: BranchParams, s) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    L = params.length_L
    B = np.empty((s.size, params.basis_size))
    B[:, 0] = 1.0
    B[:, 1] = s
    i = np.arange(1, params.num_harmonics + 1)
    arg = 2.0 * math.pi * np.outer(s, i) / L
    B[:, 2::2] = np.sin(arg)
    B[:, 3::2] = np.cos(arg)
    return B


def basis_derivative_matrix(params: BranchParams, s) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    L = params.length_L
    D = np.zeros((s.size, params.basis_size))
    D[:, 1] = 1.0
    i = np.arange(1, params.num_harmonics + 1)
    k = 2.0 * math.pi * i / L
    arg = np.outer(s, k)
    D[:, 2::2] = k * np.cos(arg)
    D[:, 3::2] = -k * np.sin(arg)
    return D


def simpson_weights(n_intervals: int, h: float) -> np.ndarray:
    if n_intervals % 2:
        raise ValueError("composite Simpson needs an even number of intervals")
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def cumulative_simpson(f: np.ndarray, h: float) -> np.ndarray:
    """Running integral of samples ``f`` on a uniform grid, starting at 0.

    Even nodes use composite Simpson exactly; odd nodes add the quadratic
    rule over the half panel, so the last entry equals the full Simpson sum.
    """
    n = f.shape[0] - 1
    out = np.zeros_like(f, dtype=float)
    panels = h / 3.0 * (f[0:n - 1:2] + 4.0 * f[1:n:2] + f[2:n + 1:2])
    out[2::2] = np.cumsum(panels, axis=0)
    half = h / 12.0 * (5.0 * f[0:n - 1:2] + 8.0 * f[1:n:2] - f[2:n + 1:2])
    out[1::2] = out[0:n - 1:2] + half
    return out


@lru_cache(maxsize=64)
def _discretization(params: BranchParams):
    s = params.s_grid()
    h = params.length_L / params.quadrature_points
    B = basis_matrix(params, s)
    D = basis_derivative_matrix(params, s)
    w = simpson_weights(params.quadrature_points, h)
    Q = D.T @ (w[:, None] * D)
    return s, h, B, D, w, Q


def _as_coeffs(params: BranchParams, coeffs) -> np.ndarray:
    a = np.asarray(coeffs, dtype=float)
    if a.shape != (params.basis_size,):
        raise ValueError(
            f"expected {params.basis_size} coefficients, got shape {a.shape}")
    return a


def straight_coefficients(params: BranchParams) -> np.ndarray:
    a = np.zeros(params.basis_size)
    a[0] = params.base_angle_theta0
    return a


def theta_of_s(params: BranchParams, coeffs, s):
    a = _as_coeffs(params, coeffs)
    out = basis_matrix(params, s) @ a
    return float(out[0]) if np.ndim(s) == 0 else out


def position_of_s(params: BranchParams, coeffs, s: float) -> tuple:
    """(x, z) at arc length ``s`` by Simpson quadrature of (cos, sin) theta."""
    a = _as_coeffs(params, coeffs)
    if s == 0:
        return (0.0, 0.0)
    n = params.quadrature_points
    u = np.linspace(0.0, s, n + 1)
    th = basis_matrix(params, u) @ a
    w = simpson_weights(n, s / n)
    return (float(w @ np.cos(th)), float(w @ np.sin(th)))


def potential_energy(params: BranchParams, coeffs) -> float:
    a = _as_coeffs(params, coeffs)
    Q = _discretization(params)[5]
    return 0.5 * params.flexural_rigidity_EI * float(a @ Q @ a)


def energy_gradient(params: BranchParams, coeffs) -> np.ndarray:
    a = _as_coeffs(params, coeffs)
    Q = _discretization(params)[5]
    return params.flexural_rigidity_EI * (Q @ a)


def endpoint_constraints(params: BranchParams, coeffs, target: EndpointTarget):
    """Constraint residuals and their Jacobian in coefficient space.

    Rows: x(L) - x_d, z(L) - z_d, theta(0) - theta0 and, when the target
    carries a tip angle, theta(L) - theta2.
    """
    a = _as_coeffs(params, coeffs)
    _, _, B, _, w, _ = _discretization(params)
    th = B @ a
    c, sn = np.cos(th), np.sin(th)
    rows = [w @ c - target.x_desired, w @ sn - target.z_desired,
            th[0] - params.base_angle_theta0]
    jac = [-(w * sn) @ B, (w * c) @ B, B[0]]
    if target.tip_angle_theta2 is not None:
        rows.append(th[-1] - target.tip_angle_theta2)
        jac.append(B[-1])
    return np.array(rows), np.vstack(jac)


# --------------------------------------------------------------------------
# solver


@lru_cache(maxsize=64)
def _reduction(params: BranchParams, with_tip: bool):
    """Null-space basis for the linear angle constraints.

    Returns (Z, G, Qr) with a = a_part + Z y, theta_grid = theta_part + G y.
    """
    s, h, B, D, w, Q = _discretization(params)
    A = [B[0]]
    if with_tip:
        A.append(B[-1])
    A = np.vstack(A)
    _, _, vt = np.linalg.svd(A)
    Z = vt[A.shape[0]:].T.copy()
    return Z, B @ Z, Z.T @ Q @ Z


def _particular(params: BranchParams, target: EndpointTarget) -> np.ndarray:
    a = straight_coefficients(params)
    if target.tip_angle_theta2 is not None:
        a[1] = (target.tip_angle_theta2 - params.base_angle_theta0) / params.length_L
    return a


def _arc_endpoints(params: BranchParams, kappa: np.ndarray) -> np.ndarray:
    L = params.length_L
    t0 = params.base_angle_theta0
    x = (np.sin(t0 + kappa * L) - math.sin(t0)) / kappa
    z = (math.cos(t0) - np.cos(t0 + kappa * L)) / kappa
    return np.column_stack([x, z])


# even count keeps kappa = 0 (a symmetric saddle for targets on the axis) off the grid
_KAPPA_GRID = np.linspace(-4.0 * math.pi, 4.0 * math.pi, 800)


def _arc_starts(params: BranchParams, target: EndpointTarget) -> list:
    """Constant-curvature guesses ordered by how close their arc endpoint
    lands to the target; the first is the default cold start."""
    kappa = _KAPPA_GRID / params.length_L
    end = _arc_endpoints(params, kappa)
    d = np.hypot(end[:, 0] - target.x_desired, end[:, 1] - target.z_desired)
    order = np.argsort(d, kind="stable")
    picks = [kappa[order[0]]]
    # next-best local minima of the endpoint distance, then the mirrored arc
    interior = np.flatnonzero((d[1:-1] <= d[:-2]) & (d[1:-1] <= d[2:])) + 1
    for k in interior[np.argsort(d[interior], kind="stable")]:
        if all(abs(kappa[k] - p) > 0.5 / params.length_L for p in picks):
            picks.append(kappa[k])
    picks.append(-picks[0])
    out = []
    for k in picks[:4]:
        a = straight_coefficients(params)
        a[1] = k
        out.append(a)
    return out


def heuristic_init(params: BranchParams, target: EndpointTarget) -> np.ndarray:
    """Constant-curvature guess whose arc endpoint lands nearest the target."""
    return _arc_starts(params, target)[0]


class _ReducedProblem:
    """Scaled problem in null-space coordinates.

    Objective f = U / (EI/L); constraints c = (x(L)-x_d, z(L)-z_d) / L.
    """

    def __init__(self, params: BranchParams, target: EndpointTarget):
        self.params = params
        self.target = target
        with_tip = target.tip_angle_theta2 is not None
        _, h, B, _, w, Q = _discretization(params)
        self.Z, self.G, Qr = _reduction(params, with_tip)
        self.w = w
        self.a_part = _particular(params, target)
        L = params.length_L
        self.L = L
        self.H0 = L * Qr
        self.g0 = L * (self.Z.T @ (Q @ self.a_part))
        self.f0 = 0.5 * L * float(self.a_part @ Q @ self.a_part)
        self.theta_part = B @ self.a_part
        self.goal = np.array([target.x_desired, target.z_desired]) / L

    def to_reduced(self, a: np.ndarray) -> np.ndarray:
        return self.Z.T @ (a - self.a_part)

    def to_full(self, y: np.ndarray) -> np.ndarray:
        return self.a_part + self.Z @ y

    def objective(self, y):
        return self.f0 + float(self.g0 @ y) + 0.5 * float(y @ self.H0 @ y)

    def constraints(self, y) -> np.ndarray:
        th = self.theta_part + self.G @ y
        return np.array([self.w @ np.cos(th), self.w @ np.sin(th)]) / self.L - self.goal

    def evaluate(self, y):
        """Constraints, their Jacobian and the weighted cos/sin terms that
        :meth:`constraint_hessian` needs."""
        th = self.theta_part + self.G @ y
        wc, ws = self.w * np.cos(th), self.w * np.sin(th)
        cons = np.array([wc.sum(), ws.sum()]) / self.L - self.goal
        J = (np.column_stack([-ws, wc]).T @ self.G) / self.L
        return cons, J, wc, ws

    def constraint_hessian(self, m, wc, ws) -> np.ndarray:
        """m[0] * Hess(c_x) + m[1] * Hess(c_z) in reduced coordinates."""
        return -(self.G.T * ((m[0] * wc + m[1] * ws) / self.L)) @ self.G


def _chol_solve(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Newton step -H^{-1} g, shifting the diagonal until H is positive definite."""
    tau = 0.0
    scale = max(1e-12, float(np.max(np.abs(np.diag(H)))))
    eye = None
    for _ in range(20):
        try:
            if tau == 0.0:
                factor = cho_factor(H, check_finite=False)
            else:
                factor = cho_factor(H + tau * eye, check_finite=False)
        except LinAlgError:
            if eye is None:
                eye = np.eye(H.shape[0])
            tau = max(10.0 * tau, 1e-6 * scale)
            continue
        return cho_solve(factor, -g, check_finite=False)
    return -g


def _kkt_norm(prob: _ReducedProblem, y, lam, cons=None, J=None) -> float:
    if J is None:
        cons, J, _, _ = prob.evaluate(y)
    grad = prob.g0 + prob.H0 @ y + J.T @ lam
    return float(np.abs(grad).max())


def _augmented_lagrangian(prob: _ReducedProblem, y, settings: SolverSettings,
                          deadline: Optional[float]):
    """Minimize f subject to c = 0; returns (y, lam, iterations, kkt)."""
    cons, J, _, _ = prob.evaluate(y)
    grad_f = prob.g0 + prob.H0 @ y
    # least-squares multiplier estimate at the starting point
    lam = -np.linalg.lstsq(J.T, grad_f, rcond=None)[0]
    mu = settings.penalty_init
    iterations = 0
    kkt = _kkt_norm(prob, y, lam, cons, J)
    feas_prev = float(np.abs(cons).max())
    inner_tol = max(1e-3, 0.1 * settings.opt_tolerance)
    for _outer in range(settings.max_outer):

        def merit(yv, cv):
            return prob.objective(yv) + float(lam @ cv) + 0.5 * mu * float(cv @ cv)

        cons, J, wc, ws = prob.evaluate(y)
        phi = merit(y, cons)
        for _inner in range(settings.max_inner):
            if deadline is not None and time.perf_counter() > deadline:
                raise SolveTimeout("shape solve exceeded its time budget")
            iterations += 1
            m = lam + mu * cons
            g = prob.g0 + prob.H0 @ y + J.T @ m
            if np.abs(g).max() <= inner_tol:
                break
            H = prob.H0 + prob.constraint_hessian(m, wc, ws) + mu * (J.T @ J)
            step = _chol_solve(H, g)
            slope = float(g @ step)
            if slope >= 0:
                step, slope = -g, -float(g @ g)
            t = 1.0
            for _ls in range(50):
                y_try = y + t * step
                c_try = prob.constraints(y_try)
                phi_try = merit(y_try, c_try)
                if phi_try <= phi + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                break
            if t * np.abs(step).max() < 1e-15:
                break
            y = y_try
            cons, J, wc, ws = prob.evaluate(y)
            phi = merit(y, cons)
        lam = lam + mu * cons
        kkt = _kkt_norm(prob, y, lam, cons, J)
        feas = float(np.abs(cons).max())
        if feas <= settings.feasibility_tolerance and kkt <= settings.opt_tolerance:
            break
        # inexact inner solves: tighten with feasibility, grow the penalty
        # only when feasibility stalls
        inner_tol = max(0.1 * settings.opt_tolerance, min(0.1 * inner_tol, feas))
        if feas > 0.25 * feas_prev:
            mu *= settings.penalty_growth
        feas_prev = feas
    return y, lam, iterations, kkt


def solve_shape(params: BranchParams, target: EndpointTarget, init=None,
                settings: SolverSettings = DEFAULT_SETTINGS,
                deadline: Optional[float] = None) -> ShapeSolution:
    """Minimum-energy branch shape reaching ``target``.

    ``init`` warm-starts the coefficients; ``deadline`` is an absolute
    ``time.perf_counter()`` value after which :class:`SolveTimeout` is raised.
    """
    L = params.length_L
    if target.norm > L * (1.0 + settings.reachability_slack):
        raise Unreachable(
            f"target norm {target.norm:.6g} exceeds reach {L * (1 + settings.reachability_slack):.6g}")
    prob = _ReducedProblem(params, target)
    starts = []
    if init is not None:
        starts.append(_as_coeffs(params, init))
    starts.extend(_arc_starts(params, target))
    last = None
    for a0 in starts:
        y0 = prob.to_reduced(a0)
        y, lam, its, kkt = _augmented_lagrangian(prob, y0, settings, deadline)
        sol = _package(params, target, prob, y, lam, its, kkt, settings)
        if sol.endpoint_residual <= settings.position_tolerance * L:
            return sol
        last = sol
    raise SolveFailed(
        f"endpoint residual {last.endpoint_residual:.3g} m after {last.iterations} iterations")


def _package(params, target, prob, y, lam, its, kkt, settings) -> ShapeSolution:
    s, h, B, _, _, _ = _discretization(params)
    a = prob.to_full(y)
    th = B @ a
    pos = np.column_stack([cumulative_simpson(np.cos(th), h),
                           cumulative_simpson(np.sin(th), h)])
    pos[0] = 0.0
    res = float(np.hypot(pos[-1, 0] - target.x_desired, pos[-1, 1] - target.z_desired))
    ang = [abs(th[0] - params.base_angle_theta0)]
    if target.tip_angle_theta2 is not None:
        ang.append(abs(th[-1] - target.tip_angle_theta2))
    converged = (res <= settings.position_tolerance * params.length_L
                 and max(ang) <= settings.angle_tolerance
                 and kkt <= settings.opt_tolerance)
    EI, L = params.flexural_rigidity_EI, params.length_L
    return ShapeSolution(
        coefficients=a, s_grid=s, theta=th, positions=pos,
        energy=max(0.0, potential_energy(params, a)),
        endpoint_residual=res, angle_residuals=tuple(ang),
        converged=bool(converged), iterations=its,
        multipliers=np.asarray(lam) * EI / L**2, optimality=kkt)
