import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad

from branchmanip import dlo
from branchmanip.dlo import (BranchParams, EndpointTarget, InvalidBasisIndex, SolveFailed,
                             Unreachable, basis_eval, position_of_s, potential_energy,
                             solve_shape, theta_of_s)

from oracles import central_gradient, chain_min_energy, fd_energy

UNIT = BranchParams(length_L=1.0, flexural_rigidity_EI=1.0)
PI2 = math.pi / 2


def coeffs(params, *head):
    a = np.zeros(params.basis_size)
    a[:len(head)] = head
    return a


# ---------------------------------------------------------------- basis

def test_basis_examples():
    p = BranchParams()
    assert basis_eval(p, 1, 0.3) == 1.0
    assert basis_eval(p, 3, p.length_L / 4) == pytest.approx(1.0, abs=1e-15)
    assert basis_eval(p, 4, 0.0) == 1.0
    assert basis_eval(p, 2, 0.25) == 0.25


@pytest.mark.parametrize("index", [0, -1, 23, 100])
def test_basis_index_out_of_range(index):
    with pytest.raises(InvalidBasisIndex):
        basis_eval(BranchParams(), index, 0.1)


def test_basis_matrix_matches_pointwise():
    p = BranchParams(num_harmonics=3)
    s = np.linspace(0, p.length_L, 7)
    B = dlo.basis_matrix(p, s)
    for k in range(1, p.basis_size + 1):
        assert_allclose(B[:, k - 1], basis_eval(p, k, s), atol=1e-14)


def test_params_validation():
    with pytest.raises(ValueError):
        BranchParams(length_L=0.0)
    with pytest.raises(ValueError):
        BranchParams(flexural_rigidity_EI=-1.0)
    with pytest.raises(ValueError):
        BranchParams(num_harmonics=0)
    with pytest.raises(ValueError):
        BranchParams(quadrature_points=11)
    with pytest.raises(ValueError):
        BranchParams(quadrature_points=8)
    with pytest.raises(ValueError):
        EndpointTarget(0.1, 0.2, tip_angle_theta2=-math.pi)


# ---------------------------------------------------------------- theta / position

def test_theta_examples():
    p = UNIT
    assert_allclose(theta_of_s(p, coeffs(p, PI2), np.linspace(0, 1, 5)), PI2)
    assert theta_of_s(p, coeffs(p, 0.0, 1.0), 0.5) == pytest.approx(0.5)
    assert theta_of_s(p, coeffs(p, PI2, 0.0, 0.1), 0.25) == pytest.approx(PI2 + 0.1)


def test_position_examples():
    p = BranchParams()
    assert_allclose(position_of_s(p, coeffs(p, PI2), 0.4), (0.0, 0.4), atol=1e-15)
    assert_allclose(position_of_s(p, coeffs(p, 0.0), p.length_L), (p.length_L, 0.0))
    assert position_of_s(p, coeffs(p, 1.0), 0.0) == (0.0, 0.0)


def test_position_quarter_turn_analytic():
    # theta = (pi/2)(1 - s): x(1) = z(1) = 2/pi analytically
    x, z = position_of_s(UNIT, coeffs(UNIT, PI2, -PI2), 1.0)
    assert x == pytest.approx(2 / math.pi, rel=1e-9)
    assert z == pytest.approx(2 / math.pi, rel=1e-9)


def test_cumulative_simpson_matches_endpoint():
    p = UNIT
    a = coeffs(p, PI2, -1.0, 0.2, -0.1)
    s = p.s_grid()
    th = dlo.basis_matrix(p, s) @ a
    cum = dlo.cumulative_simpson(np.cos(th), s[1])
    for k in (2, 50, 101, p.quadrature_points):
        exact = quad(lambda v: math.cos(float(dlo.basis_matrix(p, np.array([v]))[0] @ a)),
                     0.0, s[k], epsabs=1e-13)[0]
        assert cum[k] == pytest.approx(exact, abs=1e-8)
        assert position_of_s(p, a, s[k])[0] == pytest.approx(exact, abs=1e-8)


# ---------------------------------------------------------------- energy

def test_energy_examples():
    assert potential_energy(UNIT, coeffs(UNIT, PI2)) == 0.0
    p = BranchParams(length_L=1.0, flexural_rigidity_EI=2.0)
    for c in (0.3, -1.7, 4.0):
        assert potential_energy(p, coeffs(p, 0.0, c)) == pytest.approx(c**2, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_energy_against_finite_difference_oracle(seed):
    rng = np.random.default_rng(seed)
    p = BranchParams(length_L=0.8, flexural_rigidity_EI=0.7, num_harmonics=4)
    a = rng.normal(size=p.basis_size)
    expected = fd_energy(p.length_L, p.flexural_rigidity_EI,
                         lambda s: dlo.basis_matrix(p, s) @ a, n=10_000)
    assert potential_energy(p, a) == pytest.approx(expected, rel=1e-3)


@given(st.lists(st.floats(-20, 20), min_size=22, max_size=22))
def test_energy_nonnegative(values):
    assert potential_energy(BranchParams(), np.array(values)) >= 0.0


# ---------------------------------------------------------------- gradients

def test_gradients_match_central_differences():
    rng = np.random.default_rng(11)
    p = BranchParams()
    target = EndpointTarget(0.2, 0.3, tip_angle_theta2=0.4)
    worst = 0.0
    for _ in range(100):
        a = rng.normal(scale=1.0, size=p.basis_size)
        g = dlo.energy_gradient(p, a)
        g_fd = central_gradient(lambda v: potential_energy(p, v), a, 1e-6)
        worst = max(worst, np.linalg.norm(g_fd - g) / np.linalg.norm(g))
        _, J = dlo.endpoint_constraints(p, a, target)
        J_fd = central_gradient(lambda v: dlo.endpoint_constraints(p, v, target)[0], a, 1e-6)
        worst = max(worst, np.linalg.norm(J_fd - J) / np.linalg.norm(J))
    assert worst < 1e-4


# ---------------------------------------------------------------- solver

def test_rest_configuration():
    p = BranchParams()
    sol = solve_shape(p, EndpointTarget(0.0, p.length_L, PI2))
    assert sol.energy < 1e-8
    assert sol.endpoint_residual < 1e-3 * p.length_L
    assert sol.converged
    assert_allclose(sol.theta, PI2, atol=1e-7)
    assert tuple(sol.positions[0]) == (0.0, 0.0)


def test_rest_without_tip_angle():
    sol = solve_shape(UNIT, EndpointTarget(0.0, 1.0))
    assert sol.energy < 1e-8 and sol.converged


@pytest.mark.parametrize("x,z,tip", [(0.3, 0.5, None), (0.5, 0.2, None),
                                     (0.4, 0.6, 0.3), (0.1, -0.3, None)])
def test_reflection_symmetry(x, z, tip):
    right = solve_shape(UNIT, EndpointTarget(x, z, tip))
    left = solve_shape(UNIT, EndpointTarget(-x, z, None if tip is None else math.pi - tip))
    assert left.energy == pytest.approx(right.energy, rel=1e-6)


def test_matches_chain_oracle_at_spec_target():
    sol = solve_shape(UNIT, EndpointTarget(0.6, 0.6))
    oracle, _ = chain_min_energy(1.0, 1.0, 0.6, 0.6)
    assert sol.converged
    assert sol.energy <= 1.1 * oracle
    assert sol.energy == pytest.approx(oracle, rel=0.1)


def test_tip_angle_constraint_enforced():
    target = EndpointTarget(0.4, 0.7, tip_angle_theta2=0.2)
    sol = solve_shape(UNIT, target)
    assert sol.converged
    assert sol.theta[-1] == pytest.approx(0.2, abs=1e-9)
    assert sol.theta[0] == pytest.approx(PI2, abs=1e-12)
    free = solve_shape(UNIT, EndpointTarget(0.4, 0.7))
    assert free.energy <= sol.energy + 1e-9


def test_unreachable():
    with pytest.raises(Unreachable):
        solve_shape(UNIT, EndpointTarget(0.0, 1.5))
    with pytest.raises(Unreachable):
        solve_shape(UNIT, EndpointTarget(0.8, 0.8))


def test_solve_failed_near_rim():
    # just inside the slack but far from the only straight configuration
    with pytest.raises(SolveFailed):
        solve_shape(UNIT, EndpointTarget(1.0, 0.0))


def test_warm_start_is_honoured():
    cold = solve_shape(UNIT, EndpointTarget(0.35, 0.7))
    warm = solve_shape(UNIT, EndpointTarget(0.36, 0.7), init=cold.coefficients)
    assert warm.converged
    assert warm.iterations < cold.iterations


def test_time_budget():
    with pytest.raises(dlo.SolveTimeout):
        solve_shape(UNIT, EndpointTarget(0.3, 0.3), deadline=0.0)


def test_multipliers_are_energy_gradient():
    # envelope theorem: multipliers equal -dU*/d(target)
    # step large enough that solve residuals (~1e-7) do not swamp the difference
    x, z, h = 0.35, 0.55, 1e-3
    sol = solve_shape(UNIT, EndpointTarget(x, z))
    gx = (solve_shape(UNIT, EndpointTarget(x + h, z), init=sol.coefficients).energy
          - solve_shape(UNIT, EndpointTarget(x - h, z), init=sol.coefficients).energy) / (2 * h)
    gz = (solve_shape(UNIT, EndpointTarget(x, z + h), init=sol.coefficients).energy
          - solve_shape(UNIT, EndpointTarget(x, z - h), init=sol.coefficients).energy) / (2 * h)
    assert_allclose(sol.multipliers, [-gx, -gz], rtol=1e-4)


# ---------------------------------------------------------------- invariants

reachable = st.tuples(st.floats(0.05, 0.88), st.floats(-math.pi, math.pi)).map(
    lambda t: (t[0] * math.cos(t[1]), t[0] * math.sin(t[1])))


@settings(max_examples=30, deadline=None)
@given(reachable)
def test_converged_solutions_satisfy_constraints(xz):
    try:
        sol = solve_shape(UNIT, EndpointTarget(*xz))
    except SolveFailed:
        return
    if sol.converged:
        assert sol.endpoint_residual <= 1e-3
        assert abs(sol.theta[0] - PI2) <= 1e-2
    assert sol.energy >= 0.0
    assert tuple(sol.positions[0]) == (0.0, 0.0)


def test_quadrature_consistency():
    rng = np.random.default_rng(5)
    p = BranchParams(length_L=1.0, flexural_rigidity_EI=1.0)
    p2 = BranchParams(length_L=1.0, flexural_rigidity_EI=1.0, quadrature_points=400)
    done = 0
    while done < 8:
        r, ang = 0.85 * math.sqrt(rng.uniform()), rng.uniform(-math.pi, math.pi)
        try:
            sol = solve_shape(p, EndpointTarget(r * math.cos(ang), r * math.sin(ang)))
        except SolveFailed:
            continue
        if not sol.converged:
            continue
        done += 1
        e2 = potential_energy(p2, sol.coefficients)
        x2, z2 = position_of_s(p2, sol.coefficients, 1.0)
        assert abs(e2 - sol.energy) <= 1e-6 * sol.energy
        assert math.hypot(x2 - sol.endpoint[0], z2 - sol.endpoint[1]) <= 1e-6 * p.length_L


@pytest.mark.parametrize("x,z", [(0.3, 0.6), (0.5, 0.2), (-0.4, 0.1), (0.2, -0.4)])
def test_basis_monotonicity(x, z):
    energies = []
    for k in (2, 3, 4, 5, 6):
        p = BranchParams(length_L=1.0, flexural_rigidity_EI=1.0, num_harmonics=k)
        energies.append(solve_shape(p, EndpointTarget(x, z)).energy)
    for lo, hi in zip(energies[1:], energies[:-1]):
        assert lo <= hi + 1e-6
