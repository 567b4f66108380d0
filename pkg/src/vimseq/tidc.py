"""Minimum-jerk joint tracking with a third-order inverse dynamics law.

The joint obeys ``I qdd + c qd = tau_s(q, th1, th2)`` with
``c = dmax u3 + b``. Differentiating once gives

    I qddd = J_th thd + J_q qd + J_qd qdd - c qdd

where ``J_th = dtau/d(th1, th2)``. Imposing the error law
``e''' + K3 e'' + K2 e' + K1 e = 0`` on ``e = q - q_des`` yields a linear
equation ``J_th v = b`` for the servo velocities ``v``. It is resolved with a
metric-weighted pseudoinverse, and the remaining null-space direction pulls
the servos toward ``(q*_i, p_s_i)``.

For a constant-inertia, gravity-free joint with fixed ``u3`` the time
derivatives dM/dt, dC/dt and dG/dt vanish; a multi-joint version would add
``dM/dt qdd + dC/dt qd + dG/dt`` to ``b``.

The servos accept position commands, so ``v`` is integrated into a command
reference at the control rate. An optional lead term ``2 v / beta`` removes
the steady ramp lag of the critically damped servo model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .costs import performance_cost
from .dynamics import Trajectory, _as_state, _check_finite, _rk4, _spring
from .energy import E_IN, EnergyReport, energy_report
from .params import I_BETA, I_DMAX, I_FRICTION, I_INERTIA, PhysicalParams

TOTAL_TIME = 2.4
MIN_DURATION = 0.3
RANK_TOL = 1e-9


class ExtrapolationError(ValueError):
    """Time outside the segment."""


class InfeasibleTimingError(ValueError):
    """The derived last duration violates its lower bound."""


@dataclass(frozen=True)
class MinJerkSegment:
    q0: float
    qf: float
    T: float

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError("segment duration must be positive")


def min_jerk(seg: MinJerkSegment, t):
    """Position, velocity, acceleration and jerk of the rest-to-rest quintic."""
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > seg.T + 1e-12):
        raise ExtrapolationError(f"t outside [0, {seg.T}]")
    s = np.clip(t / seg.T, 0.0, 1.0)
    d = seg.qf - seg.q0
    T = seg.T
    q = seg.q0 + d * (10 * s**3 - 15 * s**4 + 6 * s**5)
    qd = d / T * (30 * s**2 - 60 * s**3 + 30 * s**4)
    qdd = d / T**2 * (60 * s - 180 * s**2 + 120 * s**3)
    qddd = d / T**3 * (60 - 360 * s + 360 * s**2)
    if q.ndim == 0:
        return float(q), float(qd), float(qdd), float(qddd)
    return q, qd, qdd, qddd


@dataclass(frozen=True)
class TidcGains:
    K1: float
    K2: float
    K3: float
    metric: np.ndarray = field(default_factory=lambda: np.eye(2))
    nullspace_gain: float = 1.0
    servo_lead: bool = True
    damping: float = 0.0

    def __post_init__(self) -> None:
        if not (self.K1 > 0 and self.K2 > 0 and self.K3 > 0 and self.K2 * self.K3 > self.K1):
            raise ValueError("error dynamics s^3 + K3 s^2 + K2 s + K1 must be Hurwitz")
        N = np.asarray(self.metric, dtype=float)
        if N.shape != (2, 2) or not np.allclose(N, N.T) or np.linalg.eigvalsh(N)[0] <= 0:
            raise ValueError("metric must be a symmetric positive definite 2x2 matrix")
        object.__setattr__(self, "metric", N)
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError("damping duty must lie in [0, 1]")

    @classmethod
    def triple_pole(cls, pole: float = -15.0, **kw) -> "TidcGains":
        a = -pole
        return cls(K1=a**3, K2=3 * a**2, K3=3 * a, **kw)

    def metric_roots(self) -> tuple[np.ndarray, np.ndarray]:
        """(N^{-1/2}, N^{1/2})."""
        w, V = np.linalg.eigh(self.metric)
        return (V / np.sqrt(w)) @ V.T, (V * np.sqrt(w)) @ V.T


@njit(cache=True)
def _torque_jac(x, p):
    _, _, _, dtau_dd, dtau_dth2, _ = _spring(x[0], x[2], x[3], p)
    return np.array([dtau_dd, dtau_dth2]), -dtau_dd


@njit(cache=True)
def _tidc_v(x, ref, u3, K, Nmh, Nh, v_ns, p):
    """Servo velocity command; returns (v, b, rank_ok)."""
    inertia = p[I_INERTIA]
    c = p[I_DMAX] * u3 + p[I_FRICTION]
    tau = _spring(x[0], x[2], x[3], p)[0]
    qdd = (tau - c * x[1]) / inertia
    Jth, Jq = _torque_jac(x, p)
    e0 = x[0] - ref[0]
    e1 = x[1] - ref[1]
    e2 = qdd - ref[2]
    # J_qd = 0: the spring torque has no direct velocity dependence
    b = inertia * ref[3] - Jq * x[1] + c * qdd - inertia * (K[2] * e2 + K[1] * e1 + K[0] * e0)
    Jt = Jth @ Nmh
    n2 = Jt @ Jt
    if n2 < RANK_TOL * RANK_TOL:
        return v_ns.copy(), b, False
    pinv = Jt / n2
    v_task = Nmh @ (pinv * b)
    proj = np.eye(2) - np.outer(pinv, Jt)
    v = v_task + Nmh @ (proj @ (Nh @ v_ns))
    return v, b, True


@njit(cache=True)
def _track(x0, refs, targets, presets, K, Nmh, Nh, ns_gain, lead, u3, lo, hi, dt, p):
    n = refs.shape[0]
    X = np.empty((n + 1, 6))
    U = np.empty((n, 3))
    X[0] = x0
    r = np.array([x0[2], x0[3]])
    beta = p[I_BETA]
    deficient = 0
    for t in range(n):
        x = X[t]
        v_ns = ns_gain * np.array([targets[t] - x[2], presets[t] - x[3]])
        v, _, ok = _tidc_v(x, refs[t], u3, K, Nmh, Nh, v_ns, p)
        if not ok:
            deficient += 1
        r = np.minimum(np.maximum(r + v * dt, lo), hi)
        cmd = r + lead * 2.0 / beta * v
        U[t, 0] = min(max(cmd[0], lo[0]), hi[0])
        U[t, 1] = min(max(cmd[1], lo[1]), hi[1])
        U[t, 2] = u3
        X[t + 1] = _rk4(x, U[t], dt, p)
    return X, U, deficient


def actuator_torque_jacobians(state, params: PhysicalParams):
    """Partials of the spring torque: ``(J_th (2,), J_q, J_qd)``.

    ``J_qd`` is identically zero; joint damping enters through the plant term.
    """
    x = _as_state(state)
    _check_finite(x)
    Jth, Jq = _torque_jac(x, params.packed())
    return Jth, float(Jq), 0.0


@dataclass
class TidcCommand:
    v: np.ndarray
    u3: float
    b: float
    rank_deficient: bool


def tidc_control(state, reference, gains: TidcGains, params: PhysicalParams,
                 target: float, preset: float) -> TidcCommand:
    """Servo velocity command for one control instant.

    ``reference`` is ``(q_des, qd_des, qdd_des, qddd_des)``. The null-space
    command is ``gains.nullspace_gain * (target - th1, preset - th2)``.
    """
    x = _as_state(state)
    ref = np.asarray(reference, dtype=float)
    _check_finite(x, ref)
    Nmh, Nh = gains.metric_roots()
    v_ns = gains.nullspace_gain * np.array([target - x[2], preset - x[3]])
    K = np.array([gains.K1, gains.K2, gains.K3])
    v, b, ok = _tidc_v(x, ref, gains.damping, K, Nmh, Nh, v_ns, params.packed())
    return TidcCommand(v=v, u3=gains.damping, b=float(b), rank_deficient=not ok)


def split_durations(free: Sequence[float], total: float = TOTAL_TIME,
                    min_last: float = MIN_DURATION) -> np.ndarray:
    """Append the remainder so the durations sum to ``total``."""
    free = [float(t) for t in free]
    last = total - sum(free)
    if last < min_last - 1e-12:
        raise InfeasibleTimingError(f"last duration {last:.4f} s below {min_last} s")
    return np.array(free + [last])


@dataclass
class TrackingEpisode:
    trajectory: Trajectory
    report: EnergyReport
    q_des: np.ndarray
    segment_steps: list
    rank_deficient_steps: int


def reference_signal(q0: float, targets: Sequence[float], durations: Sequence[float],
                     dt: float) -> tuple[np.ndarray, list]:
    """Stacked min-jerk references ``(n, 4)`` sampled at the start of each step."""
    rows = []
    steps = []
    start = q0
    # round the cumulative boundaries so the total stays on the grid exactly
    edges = np.rint(np.concatenate([[0.0], np.cumsum(durations)]) / dt).astype(int)
    for qf, n in zip(targets, np.diff(edges)):
        n = int(n)
        seg = MinJerkSegment(start, qf, n * dt)
        t = dt * np.arange(n)
        rows.append(np.column_stack(min_jerk(seg, t)))
        steps.append(n)
        start = qf
    return np.vstack(rows), steps


def track_sequence(x0, targets: Sequence[float], durations: Sequence[float],
                   presets: Sequence[float], gains: TidcGains, params: PhysicalParams,
                   dt: float = 0.001, objective: str = E_IN,
                   performance_weight: float = 1000.0) -> TrackingEpisode:
    """Track consecutive min-jerk segments and account the energy.

    Durations are rounded to the control grid. ``J_p`` of the report is the
    terminal reaching error of every segment plus the integrated squared
    tracking error, both weighted by ``performance_weight``.
    """
    x0 = np.asarray(x0, dtype=float)
    if not (len(targets) == len(durations) == len(presets)):
        raise ValueError("targets, durations and presets must have equal length")
    if any(T < MIN_DURATION - 1e-12 for T in durations):
        raise InfeasibleTimingError("segment shorter than the minimum duration")
    refs, steps = reference_signal(x0[0], targets, durations, dt)
    tgt = np.repeat(np.asarray(targets, float), steps)
    pre = np.repeat(np.asarray(presets, float), steps)
    Nmh, Nh = gains.metric_roots()
    K = np.array([gains.K1, gains.K2, gains.K3])
    lo = np.array([params.u1_min, params.theta2_min])
    hi = np.array([params.u1_max, params.theta2_max])
    X, U, deficient = _track(x0, refs, tgt, pre, K, Nmh, Nh, gains.nullspace_gain,
                             1.0 if gains.servo_lead else 0.0, gains.damping, lo, hi,
                             dt, params.packed())
    q_des = np.append(refs[:, 0], targets[-1])

    def perf(tr: Trajectory) -> float:
        return performance_cost(tr.states[:, 0], tr.dt, targets, steps,
                                weight=performance_weight, reference=q_des)

    report, fine = energy_report(x0, U, dt, params, dt_fine=dt, performance=perf,
                                 objective=objective)
    return TrackingEpisode(trajectory=fine, report=report, q_des=q_des,
                           segment_steps=steps, rank_deficient_steps=int(deficient))
