import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vimseq.energy import energy_report
from vimseq.tasks import SequentialTracking
from vimseq.tidc import (
    ExtrapolationError, InfeasibleTimingError, MinJerkSegment, TidcGains,
    actuator_torque_jacobians, min_jerk, reference_signal, split_durations, tidc_control,
    track_sequence,
)
from vimseq.validate import random_state

from conftest import X0


def jerk_transcription(q0, qf, T, n_intervals):
    """Minimum-norm piecewise-constant jerk steering a triple integrator rest to rest.

    The discrete problem is solved by least squares on the exact zero-order-hold
    transition, independently of the closed-form quintic.
    """
    h = T / n_intervals
    A = np.array([[1.0, h, h * h / 2], [0.0, 1.0, h], [0.0, 0.0, 1.0]])
    B = np.array([h**3 / 6, h * h / 2, h])
    M = np.zeros((3, n_intervals))
    P = np.eye(3)
    for k in range(n_intervals - 1, -1, -1):
        M[:, k] = P @ B
        P = P @ A
    x_end = np.array([qf, 0.0, 0.0]) - np.linalg.matrix_power(A, n_intervals) @ [q0, 0.0, 0.0]
    jerk = np.linalg.lstsq(M, x_end, rcond=None)[0]
    x = np.array([q0, 0.0, 0.0])
    q = [q0]
    for j in jerk:
        x = A @ x + B * j
        q.append(x[0])
    return np.array(q)


# Max deviation of the 100-interval transcription from the quintic, frozen
# from the oracle above (unit move, unit time).
TRANSCRIPTION_DEVIATION = 2.683e-5


# --- minimum jerk -----------------------------------------------------------

@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.3, 2.0))
def test_min_jerk_boundary_conditions_exact(q0, qf, T):
    seg = MinJerkSegment(q0, qf, T)
    q, qd, qdd, _ = min_jerk(seg, 0.0)
    assert (q, qd, qdd) == (q0, 0.0, 0.0)
    q, qd, qdd, _ = min_jerk(seg, T)
    assert abs(q - qf) <= 1e-12 and abs(qd) <= 1e-12 and abs(qdd) <= 1e-12


def test_min_jerk_midpoint_and_peak_velocity():
    seg = MinJerkSegment(0.0, 1.0, 2.0)
    q, qd, qdd, _ = min_jerk(seg, 1.0)
    assert q == pytest.approx(0.5) and qd == pytest.approx(15 / 16) and abs(qdd) < 1e-14


def test_min_jerk_matches_jerk_transcription():
    n = 100
    q = jerk_transcription(0.0, 1.0, 1.0, n)
    s = np.linspace(0.0, 1.0, n + 1)
    dev = np.abs(q - min_jerk(MinJerkSegment(0.0, 1.0, 1.0), s)[0]).max()
    assert dev == pytest.approx(TRANSCRIPTION_DEVIATION, rel=1e-3)
    assert dev < 1e-4


def test_transcription_scales_with_move():
    t = np.linspace(0.0, 0.8, 101)
    q = jerk_transcription(0.3, -0.5, 0.8, 100)
    assert np.abs(q - min_jerk(MinJerkSegment(0.3, -0.5, 0.8), t)[0]).max() < 1e-4


def test_min_jerk_rejects_extrapolation():
    with pytest.raises(ExtrapolationError):
        min_jerk(MinJerkSegment(0.0, 1.0, 1.0), 1.01)
    with pytest.raises(ValueError):
        MinJerkSegment(0.0, 1.0, 0.0)


# --- control law --------------------------------------------------------------

REF = (0.3, 0.5, -1.0, 4.0)


def test_nullspace_term_has_no_joint_effect(params, rng):
    gains_off = TidcGains.triple_pole(-15.0, metric=np.diag([1.0, 100.0]), nullspace_gain=0.0)
    gains_on = TidcGains.triple_pole(-15.0, metric=np.diag([1.0, 100.0]), nullspace_gain=1.0)
    for _ in range(200):
        x, _ = random_state(rng, params)
        target, preset = rng.uniform(-1, 1), rng.uniform(0, 1.5)
        v0 = tidc_control(x, REF, gains_off, params, target, preset).v
        v1 = tidc_control(x, REF, gains_on, params, target, preset).v
        Jth, _, _ = actuator_torque_jacobians(x, params)
        assert abs(Jth @ (v1 - v0)) < 1e-9


def test_command_solves_the_error_law(params, rng):
    gains = TidcGains.triple_pole(-15.0, metric=np.diag([1.0, 100.0]))
    for _ in range(100):
        x, _ = random_state(rng, params)
        cmd = tidc_control(x, REF, gains, params, 0.2, 0.4)
        Jth, _, _ = actuator_torque_jacobians(x, params)
        assert not cmd.rank_deficient
        assert Jth @ cmd.v == pytest.approx(cmd.b, rel=1e-9, abs=1e-9)


def test_identity_metric_gives_minimum_norm(params, rng):
    gains = TidcGains.triple_pole(-15.0, nullspace_gain=0.0)
    for _ in range(50):
        x, _ = random_state(rng, params)
        cmd = tidc_control(x, REF, gains, params, 0.0, 0.0)
        Jth, _, _ = actuator_torque_jacobians(x, params)
        ref = np.linalg.lstsq(Jth[None, :], [cmd.b], rcond=None)[0]
        assert np.allclose(cmd.v, ref, rtol=1e-10, atol=1e-12)


def test_gain_validation():
    with pytest.raises(ValueError):
        TidcGains(K1=10.0, K2=1.0, K3=1.0)  # K2 K3 < K1
    with pytest.raises(ValueError):
        TidcGains.triple_pole(-15.0, metric=np.diag([1.0, -1.0]))
    g = TidcGains.triple_pole(-15.0)
    assert np.all(np.roots([1, g.K3, g.K2, g.K1]).real < 0)


# --- closed loop --------------------------------------------------------------

@pytest.fixture(scope="module")
def nominal(params):
    return SequentialTracking(params)


def test_min_jerk_tracking_error(nominal, params):
    ad = nominal
    xi = ad.initial()
    ep = track_sequence(X0, ad.targets, ad.durations(xi), xi[3:], ad.gains, params)
    err = np.abs(ep.trajectory.states[:, 0] - ep.q_des).max()
    assert err < 0.02
    assert ep.rank_deficient_steps == 0


def test_reference_reaches_each_target(nominal):
    ad = nominal
    refs, steps = reference_signal(0.0, ad.targets, [0.6] * 4, 0.001)
    assert steps == [600] * 4
    starts = np.cumsum([0] + steps[:-1])
    assert refs[starts[1:], 0] == pytest.approx(ad.targets[:-1], abs=1e-12)


@settings(max_examples=25)
@given(st.lists(st.floats(0.3, 0.7), min_size=3, max_size=3))
def test_total_time_is_fixed(free):
    d = split_durations(free)
    assert d.sum() == pytest.approx(2.4, abs=1e-12)
    _, steps = reference_signal(0.0, (0.6, -0.2, 1.0, 0.3), d, 0.001)
    assert sum(steps) == 2400


def test_infeasible_timing():
    with pytest.raises(InfeasibleTimingError):
        split_durations([0.8, 0.8, 0.6])
    assert split_durations([0.7, 0.7, 0.7])[-1] == pytest.approx(0.3)


def test_out_and_back_energy_is_similar(params):
    gains = TidcGains.triple_pole(-15.0, metric=np.diag([1.0, 100.0]))
    ep = track_sequence(X0, (0.5, 0.0), (1.0, 1.0), (0.2, 0.2), gains, params)
    n = ep.segment_steps[0]
    out, _ = energy_report(X0, ep.trajectory.controls[:n], 0.001, params, dt_fine=0.001)
    back = ep.report.E_in - out.E_in
    # the return leg starts from a loaded spring, so only loosely symmetric
    assert out.E_in > 0 and back > 0
    assert abs(back - out.E_in) / out.E_in < 0.2


def test_tracking_error_decays_after_perturbation(params):
    gains = TidcGains.triple_pole(-15.0, metric=np.diag([1.0, 100.0]))
    x0 = np.array([0.0, 1.0, 0.0, np.pi / 24, 0.0, 0.0])  # kicked, reference at rest
    ep = track_sequence(x0, (0.0,), (1.0,), (0.2,), gains, params)
    e = np.abs(ep.trajectory.states[:, 0] - ep.q_des)
    assert e.max() > 0.01
    assert e[-200:].max() < 0.05 * e.max()
