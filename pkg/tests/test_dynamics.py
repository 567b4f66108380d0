import numpy as np
import pytest
from hypothesis import given, strategies as st

from vimseq.dynamics import (
    InvalidInputError, SingularGeometryError, dynamics, dynamics_jacobians, rollout,
    spring_torques, step, step_jacobians, write_trajectory_csv,
)
from vimseq.validate import central_difference, random_state, rel_error

# Independent high-precision evaluation (sympy, 20 digits) of the spring
# formulas at q=0.2, th1=0.5, th2=0.5 with the shipped default parameters.
TAU_S_ORACLE = 0.051672651086362950726
TAU_L2_ORACLE = 3.7778851043186689033
DTAU_DQ_ORACLE = -0.23382955975962200800
DTAU_DTH2_ORACLE = 0.080835006753197816638


def state(q=0.0, qd=0.0, th1=0.0, th2=0.0, th1d=0.0, th2d=0.0):
    return np.array([q, qd, th1, th2, th1d, th2d])


def test_spring_torque_matches_symbolic_oracle(params):
    tau, tl1, tl2 = spring_torques(state(q=0.2, th1=0.5, th2=0.5), params)
    assert tau == pytest.approx(TAU_S_ORACLE, abs=1e-10)
    assert tl1 == tau
    # default lever is the drum radius; load_arm=1 gives the bare bracket
    assert tl2 == pytest.approx(params.drum_radius * TAU_L2_ORACLE, abs=1e-12)
    _, _, bare = spring_torques(state(q=0.2, th1=0.5, th2=0.5), params.replace(load_arm=1.0))
    assert bare == pytest.approx(TAU_L2_ORACLE, abs=1e-10)


def test_torque_partials_match_symbolic_oracle(params):
    from vimseq.tidc import actuator_torque_jacobians

    Jth, Jq, Jqd = actuator_torque_jacobians(state(q=0.2, th1=0.5, th2=0.5), params)
    assert Jq == pytest.approx(DTAU_DQ_ORACLE, abs=1e-10)
    assert Jth[1] == pytest.approx(DTAU_DTH2_ORACLE, abs=1e-10)
    assert Jth[0] == pytest.approx(-Jq, abs=1e-12)
    assert Jqd == 0.0


@given(st.floats(-1.5, 1.5), st.floats(0.0, 1.5))
def test_zero_deflection_gives_zero_torque(q, th2):
    from vimseq.params import default_params

    tau, _, _ = spring_torques(state(q=q, th1=q, th2=th2), default_params())
    assert abs(tau) < 1e-12


def test_unloaded_spring_at_zero_pretension(params):
    _, _, tl2 = spring_torques(state(q=0.3, th1=0.3, th2=0.0), params)
    assert abs(tl2) < 1e-12


def test_coincident_attachment_is_singular(params):
    p = params.replace(lever_B=0.05, lever_C=0.05)
    with pytest.raises(SingularGeometryError):
        spring_torques(state(), p)


def test_equilibrium_is_a_fixed_point(params):
    x = state(q=0.4, th1=0.4, th2=0.7)
    assert np.all(dynamics(x, [0.4, 0.7, 0.3], params) == 0.0)
    tr = rollout(x, np.tile([0.4, 0.7, 0.3], (200, 1)), 0.01, params)
    assert np.abs(tr.states - x).max() < 1e-12


def test_servo_step_response_reads_beta_squared(params):
    xd = dynamics(state(), [1.0, 0.0, 0.0], params)
    assert xd[4] == pytest.approx(params.servo_bandwidth**2)


def test_zero_length_rollout(params):
    x = state(q=0.1)
    tr = rollout(x, np.zeros((0, 3)), 0.02, params)
    assert tr.states.shape == (1, 6)
    assert np.array_equal(tr.states[0], x)
    assert tr.tf == 0.0


def test_rollout_length_and_time_consistency(params):
    tr = rollout(state(), np.tile([0.3, 0.2, 0.5], (37, 1)), 0.02, params)
    assert tr.states.shape[0] == tr.controls.shape[0] + 1
    assert abs(tr.tf - tr.t0 - 37 * 0.02) < 1e-12


def test_rk4_fourth_order(params):
    """Errors against a dt=1e-5 reference shrink by ~16 per halving."""
    x0 = state(th2=0.3)
    u = np.array([0.6, 0.9, 0.4])
    T = 0.4

    def end(dt):
        n = int(round(T / dt))
        return rollout(x0, np.tile(u, (n, 1)), dt, params).final_state

    ref = end(1e-5)
    e1 = np.abs(end(0.004) - ref).max()
    e2 = np.abs(end(0.002) - ref).max()
    assert 12.0 < e1 / e2 < 20.0


def test_damping_opposes_motion(params):
    for qd in (-2.0, 2.0):
        x = state(q=0.1, qd=qd, th1=0.3, th2=0.5)
        acc = [dynamics(x, [0.3, 0.5, u3], params)[1] * np.sign(qd) for u3 in np.linspace(0, 1, 6)]
        assert np.all(np.diff(acc) <= 0.0)


def test_jacobians_match_finite_differences(params, rng):
    for _ in range(50):
        x, u = random_state(rng, params)
        A, B = dynamics_jacobians(x, u, params)
        assert rel_error(A, central_difference(lambda z: dynamics(z, u, params), x)) < 1e-4
        assert rel_error(B, central_difference(lambda z: dynamics(x, z, params), u)) < 1e-4
        Fx, Fu = step_jacobians(x, u, 0.02, params)
        assert rel_error(Fx, central_difference(lambda z: step(z, u, 0.02, params), x)) < 1e-4
        assert rel_error(Fu, central_difference(lambda z: step(x, z, 0.02, params), u)) < 1e-4


def test_rejects_bad_inputs(params):
    with pytest.raises(InvalidInputError):
        dynamics(np.zeros(5), np.zeros(3), params)
    with pytest.raises(InvalidInputError):
        dynamics(np.full(6, np.nan), np.zeros(3), params)
    with pytest.raises(InvalidInputError):
        step(np.zeros(6), np.zeros(3), 0.0, params)


def test_trajectory_csv_header(tmp_path, params):
    tr = rollout(state(), np.tile([0.1, 0.2, 0.5], (3, 1)), 0.02, params)
    write_trajectory_csv(tmp_path / "t.csv", tr)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,q,qd,th1,th2,th1d,th2d,u1,u2,u3"
    assert len(lines) == 5
