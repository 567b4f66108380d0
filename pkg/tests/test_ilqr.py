import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vimseq.costs import COMPOSITE, CostSpec, performance_cost, running_cost, terminal_cost
from vimseq.ilqr import (
    LinearQuadraticProblem, OcpSpec, SolverSettings, ilqr, riccati_lqr, solve,
)
from vimseq.validate import double_integrator

from conftest import X0


def batch_lq(A, B, Q, R, Qf, x0, n):
    """Stack the whole horizon and solve the normal equations directly."""
    nx, nu = B.shape
    Sx = np.zeros(((n + 1) * nx, nx))
    Su = np.zeros(((n + 1) * nx, n * nu))
    Ak = np.eye(nx)
    for k in range(n + 1):
        Sx[k * nx:(k + 1) * nx] = Ak
        Ak = A @ Ak
    for k in range(1, n + 1):
        for j in range(k):
            Su[k * nx:(k + 1) * nx, j * nu:(j + 1) * nu] = np.linalg.matrix_power(A, k - 1 - j) @ B
    Qb = np.kron(np.eye(n + 1), Q)
    Qb[-nx:, -nx:] = Qf
    Rb = np.kron(np.eye(n), R)
    H = Su.T @ Qb @ Su + Rb
    U = -np.linalg.solve(H, Su.T @ Qb @ Sx @ x0)
    X = Sx @ x0 + Su @ U
    return U.reshape(n, nu), float(X @ Qb @ X + U @ Rb @ U)


# --- costs -----------------------------------------------------------------

def test_running_cost_zero_at_target():
    assert running_cost([0.7, 0, 0, 0, 0, 0], [0.7, 0.0, 0.5], CostSpec(target=0.7)) == 0.0
    assert terminal_cost([0.7, 0, 0, 0, 0, 0], CostSpec(target=0.7)) == 0.0


def test_running_cost_offset_example():
    assert running_cost([0.8, 0, 0, 0, 0, 0], [0.7, 0.0, 0.5], CostSpec(target=0.7, w_e=1.0)) \
        == pytest.approx(10.0)


def test_damping_term_is_linear():
    c = CostSpec(target=0.0, w_e=2.0)
    a = running_cost(np.zeros(6), [0.0, 0.0, 1.0], c)
    b = running_cost(np.zeros(6), [0.0, 0.0, 0.0], c)
    assert a == pytest.approx(2.0 * 1e-3 * 0.5)
    assert b == pytest.approx(-2.0 * 1e-3 * 0.5)


def test_composite_variant_terms():
    c = CostSpec(target=0.5, variant=COMPOSITE)
    assert running_cost([0.5, 0, 0, 0, 0, 0], [0.6, 0.2, 1.0], c) == pytest.approx(
        100 * 0.01 + 100 * 0.04 + 1e-3)
    assert terminal_cost([0.5, 0.1, 0, 0, 0, 0], c) == pytest.approx(1000 * 0.01)


def test_performance_cost_constant_offset():
    dt = 0.001
    q = np.full(1001, 0.8)
    assert performance_cost(q, dt, [0.7], [1000]) == pytest.approx(20.0, rel=1e-9)
    assert performance_cost(np.full(1001, 0.7), dt, [0.7], [1000]) == 0.0


def test_performance_cost_checks_segments():
    with pytest.raises(ValueError):
        performance_cost(np.zeros(11), 0.1, [0.0], [5])


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec(target=0.0, w_e=-1.0)
    with pytest.raises(ValueError):
        CostSpec(target=0.0, variant="nope")


# --- linear-quadratic oracle -------------------------------------------------

def test_riccati_matches_batch_least_squares():
    A, B, Q, R, Qf = double_integrator()
    x0 = np.array([1.0, -0.5])
    U_r, J_r = riccati_lqr(A, B, Q, R, Qf, x0, 50)
    U_b, J_b = batch_lq(A, B, Q, R, Qf, x0, 50)
    assert np.abs(U_r - U_b).max() < 1e-9
    assert J_r == pytest.approx(J_b, rel=1e-10)


def test_ilqr_matches_riccati():
    A, B, Q, R, Qf = double_integrator()
    x0 = np.array([1.0, -0.5])
    U_ref, J_ref = batch_lq(A, B, Q, R, Qf, x0, 50)
    res = ilqr(LinearQuadraticProblem(A, B, Q, R, Qf, 50), x0, np.zeros((50, 1)))
    assert abs(res.cost - J_ref) / J_ref < 1e-6
    assert np.abs(res.U - U_ref).max() < 1e-6


@settings(max_examples=20)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 1.0))
def test_ilqr_matches_riccati_any_start(a, b, r):
    A, B, Q, _, Qf = double_integrator()
    R = np.array([[r]])
    x0 = np.array([a, b])
    U_ref, J_ref = batch_lq(A, B, Q, R, Qf, x0, 30)
    res = ilqr(LinearQuadraticProblem(A, B, Q, R, Qf, 30), x0, np.zeros((30, 1)))
    assert abs(res.cost - J_ref) <= 1e-6 * max(J_ref, 1e-9) + 1e-12
    assert np.abs(res.U - U_ref).max() < 1e-6


def test_box_constrained_lq_respects_bounds():
    A, B, Q, R, Qf = double_integrator()
    prob = LinearQuadraticProblem(A, B, Q, R, Qf, 40, u_min=np.array([-0.5]), u_max=np.array([0.5]))
    res = ilqr(prob, np.array([3.0, 0.0]), np.zeros((40, 1)))
    assert res.U.min() >= -0.5 and res.U.max() <= 0.5
    assert np.any(np.isclose(res.U, -0.5))


# --- reaching sub-problem ----------------------------------------------------

@pytest.fixture(scope="module")
def first_reach():
    from vimseq.params import default_params

    ocp = OcpSpec(x0=X0, cost=CostSpec(target=0.7), p_s=math.pi / 24)
    return ocp, solve(ocp, default_params())


def test_first_reach_gets_close(first_reach):
    _, sol = first_reach
    assert abs(sol.trajectory.final_state[0] - 0.7) < 0.05


def test_cost_history_non_increasing(first_reach):
    _, sol = first_reach
    assert np.all(np.diff(sol.cost_history) <= 0.0)


def test_controls_inside_box(first_reach, params):
    ocp, sol = first_reach
    lo, hi = ocp.bounds(params)
    U = sol.trajectory.controls
    assert np.all(U >= lo) and np.all(U <= hi)


def test_solver_is_deterministic(first_reach, params):
    ocp, sol = first_reach
    again = solve(ocp, params)
    assert np.array_equal(again.trajectory.states, sol.trajectory.states)
    assert np.array_equal(again.trajectory.controls, sol.trajectory.controls)


def test_pinned_stiffness_channel(params):
    lo = params.u_min.copy()
    hi = params.u_max.copy()
    lo[1] = hi[1] = 0.6
    ocp = OcpSpec(x0=X0, cost=CostSpec(target=0.5), tf=0.5, u_min=lo, u_max=hi)
    sol = solve(ocp, params, SolverSettings(max_iter=50))
    assert np.all(sol.trajectory.controls[:, 1] == 0.6)


def test_ocp_validation(params):
    with pytest.raises(ValueError):
        OcpSpec(x0=X0, cost=CostSpec(target=0.7), tf=0.031).n_steps
    with pytest.raises(ValueError):
        OcpSpec(x0=X0, cost=CostSpec(target=0.7), p_s=3.0).bounds(params)


def test_settings_from_dict():
    s = SolverSettings.from_dict({"max_iter": 7, "rel_tol": 1e-3, "line_search": [1.0, 0.5],
                                  "unknown": 1})
    assert s.max_iter == 7 and s.line_search == (1.0, 0.5)
