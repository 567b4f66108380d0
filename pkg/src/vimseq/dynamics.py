"""Forward dynamics of the variable impedance joint.

State ``x = (q, qd, th1, th2, th1d, th2d)`` and control ``u = (u1, u2, u3)``
with ``u1`` the equilibrium servo command, ``u2`` the pretension servo command
and ``u3`` the normalised damping duty in [0, 1].

The compiled kernels take the packed parameter vector from
:meth:`PhysicalParams.packed`; the public wrappers take a
:class:`~vimseq.params.PhysicalParams`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .params import (
    I_B, I_BETA, I_BF, I_C, I_DMAX, I_FRICTION, I_INERTIA, I_JM, I_KAPPA,
    I_KT, I_L2ARM, I_NG, I_R, I_RM, I_TAU_EXT, PhysicalParams,
)

NX = 6
NU = 3

# Deflection geometry is treated as degenerate below this spring length.
_A_EPS = 1e-12


class SingularGeometryError(ValueError):
    """Spring attachment points coincide, so the torque is undefined."""


class InvalidInputError(ValueError):
    """Non-finite state or control, or a non-positive step."""


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _spring(q, th1, th2, p):
    """Return (tau_s, tau_l2, A, dtau/d(delta), dtau/d(th2), dtaul2/d(delta))."""
    B = p[I_B]
    C = p[I_C]
    kap = p[I_KAPPA]
    r = p[I_R]
    d = th1 - q
    sd = np.sin(d)
    cd = np.cos(d)
    A2 = B * B + C * C - 2.0 * B * C * cd
    A = np.sqrt(max(A2, 0.0))
    pre = r * th2 - abs(C - B)
    kbc = kap * B * C
    if A < _A_EPS:
        return np.nan, np.nan, A, np.nan, np.nan, np.nan
    tau = kbc * sd * (1.0 + pre / A)
    tl2 = p[I_L2ARM] * kap * (pre + A)
    dA = B * C * sd / A
    dtau_dd = kbc * (cd * (1.0 + pre / A) - sd * pre * dA / (A * A))
    dtau_dth2 = kbc * sd * r / A
    dtl2_dd = p[I_L2ARM] * kap * dA
    return tau, tl2, A, dtau_dd, dtau_dth2, dtl2_dd


@njit(cache=True)
def _f(x, u, p):
    tau = _spring(x[0], x[2], x[3], p)[0]
    beta = p[I_BETA]
    out = np.empty(6)
    out[0] = x[1]
    out[1] = (tau - (p[I_DMAX] * u[2] + p[I_FRICTION]) * x[1] - p[I_TAU_EXT]) / p[I_INERTIA]
    out[2] = x[4]
    out[3] = x[5]
    out[4] = beta * beta * (u[0] - x[2]) - 2.0 * beta * x[4]
    out[5] = beta * beta * (u[1] - x[3]) - 2.0 * beta * x[5]
    return out


@njit(cache=True)
def _f_jac(x, u, p):
    _, _, _, dtau_dd, dtau_dth2, _ = _spring(x[0], x[2], x[3], p)
    inv_i = 1.0 / p[I_INERTIA]
    beta = p[I_BETA]
    A = np.zeros((6, 6))
    Bm = np.zeros((6, 3))
    A[0, 1] = 1.0
    A[1, 0] = -dtau_dd * inv_i
    A[1, 1] = -(p[I_DMAX] * u[2] + p[I_FRICTION]) * inv_i
    A[1, 2] = dtau_dd * inv_i
    A[1, 3] = dtau_dth2 * inv_i
    A[2, 4] = 1.0
    A[3, 5] = 1.0
    A[4, 2] = -beta * beta
    A[4, 4] = -2.0 * beta
    A[5, 3] = -beta * beta
    A[5, 5] = -2.0 * beta
    Bm[1, 2] = -p[I_DMAX] * x[1] * inv_i
    Bm[4, 0] = beta * beta
    Bm[5, 1] = beta * beta
    return A, Bm


@njit(cache=True)
def _rk4(x, u, dt, p):
    k1 = _f(x, u, p)
    k2 = _f(x + 0.5 * dt * k1, u, p)
    k3 = _f(x + 0.5 * dt * k2, u, p)
    k4 = _f(x + dt * k3, u, p)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _rk4_jac(x, u, dt, p):
    """Exact derivatives of one RK4 step with respect to x and u."""
    eye = np.eye(6)
    k1 = _f(x, u, p)
    A1, B1 = _f_jac(x, u, p)
    x2 = x + 0.5 * dt * k1
    k2 = _f(x2, u, p)
    A2, B2 = _f_jac(x2, u, p)
    x3 = x + 0.5 * dt * k2
    k3 = _f(x3, u, p)
    A3, B3 = _f_jac(x3, u, p)
    x4 = x + dt * k3
    A4, B4 = _f_jac(x4, u, p)
    dk1x = A1
    dk1u = B1
    dk2x = A2 @ (eye + 0.5 * dt * dk1x)
    dk2u = A2 @ (0.5 * dt * dk1u) + B2
    dk3x = A3 @ (eye + 0.5 * dt * dk2x)
    dk3u = A3 @ (0.5 * dt * dk2u) + B3
    dk4x = A4 @ (eye + dt * dk3x)
    dk4u = A4 @ (dt * dk3u) + B4
    Fx = eye + dt / 6.0 * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    Fu = dt / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return Fx, Fu


@njit(cache=True)
def _rollout(x0, U, dt, p):
    n = U.shape[0]
    X = np.empty((n + 1, 6))
    X[0] = x0
    for k in range(n):
        X[k + 1] = _rk4(X[k], U[k], dt, p)
    return X


@njit(cache=True)
def _linearize(X, U, dt, p):
    n = U.shape[0]
    Fx = np.empty((n, 6, 6))
    Fu = np.empty((n, 6, 3))
    for k in range(n):
        a, b = _rk4_jac(X[k], U[k], dt, p)
        Fx[k] = a
        Fu[k] = b
    return Fx, Fu


@njit(cache=True)
def _powers(x, u, p):
    """(P_in1, P_in2, P_elec1, P_elec2) at one state/control pair."""
    tau, tl2, _, _, _, _ = _spring(x[0], x[2], x[3], p)
    beta = p[I_BETA]
    jm = p[I_JM]
    bf = p[I_BF]
    scale = p[I_NG] * p[I_KT]
    out = np.empty(4)
    for i in range(2):
        th = x[2 + i]
        thd = x[4 + i]
        thdd = beta * beta * (u[i] - th) - 2.0 * beta * thd
        tl = tau if i == 0 else tl2
        pin = tl * thd
        tm = tl + jm * thdd + bf * thd
        inertial = jm * thdd * thd
        pel = (tm / scale) ** 2 * p[I_RM] + max(inertial, 0.0) + bf * thd * thd + max(pin, 0.0)
        out[i] = pin
        out[2 + i] = pel
    return out


@njit(cache=True)
def _energy_integrals(x0, U, dt, p):
    """Fine-step rollout with trapezoidal integration of the positive powers.

    Each interval is integrated with the control held on that interval, so
    zero-order-hold switches are resolved exactly. Returns the state array
    and the four integrals of [P_in1]+, [P_in2]+, [P_elec1]+, [P_elec2]+.
    """
    n = U.shape[0]
    X = np.empty((n + 1, 6))
    X[0] = x0
    acc = np.zeros(4)
    for k in range(n):
        X[k + 1] = _rk4(X[k], U[k], dt, p)
        pa = _powers(X[k], U[k], p)
        pb = _powers(X[k + 1], U[k], p)
        for j in range(4):
            acc[j] += 0.5 * dt * (max(pa[j], 0.0) + max(pb[j], 0.0))
    return X, acc


# ---------------------------------------------------------------------------
# public API


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("state and control must be finite")


def _as_state(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (NX,):
        raise InvalidInputError(f"state must have shape ({NX},), got {x.shape}")
    return x


def _as_control(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (NU,):
        raise InvalidInputError(f"control must have shape ({NU},), got {u.shape}")
    return u


def spring_torques(state, params: PhysicalParams) -> tuple[float, float, float]:
    """Spring torque at the joint and the load torques seen by both servos.

    Returns
    -------
    tau_s, tau_l1, tau_l2 : float
        Joint torque, load on the equilibrium servo (equal to ``tau_s``) and
        load on the pretension servo.
    """
    x = _as_state(state)
    _check_finite(x)
    tau, tl2, A, *_ = _spring(x[0], x[2], x[3], params.packed())
    if A < _A_EPS:
        raise SingularGeometryError("spring length A(q, th1) is zero")
    return float(tau), float(tau), float(tl2)


def dynamics(state, control, params: PhysicalParams) -> np.ndarray:
    x = _as_state(state)
    u = _as_control(control)
    _check_finite(x, u)
    xd = _f(x, u, params.packed())
    if not np.all(np.isfinite(xd)):
        raise SingularGeometryError("spring length A(q, th1) is zero")
    return xd


def dynamics_jacobians(state, control, params: PhysicalParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time Jacobians ``df/dx`` (6x6) and ``df/du`` (6x3)."""
    x = _as_state(state)
    u = _as_control(control)
    _check_finite(x, u)
    return _f_jac(x, u, params.packed())


def step(state, control, dt: float, params: PhysicalParams) -> np.ndarray:
    """One explicit RK4 step with the control held constant."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    return _rk4(_as_state(state), _as_control(control), float(dt), params.packed())


def step_jacobians(state, control, dt: float, params: PhysicalParams):
    return _rk4_jac(_as_state(state), _as_control(control), float(dt), params.packed())


def motor_powers(state, control, params: PhysicalParams) -> tuple[float, float, float, float]:
    """Mechanical input and electrical power of both servos.

    Servo accelerations come from the servo model at the given state rather
    than from differencing velocities.
    """
    x = _as_state(state)
    u = _as_control(control)
    _check_finite(x, u)
    return tuple(float(v) for v in _powers(x, u, params.packed()))


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform grid with zero-order-hold controls between them."""

    dt: float
    states: np.ndarray
    controls: np.ndarray
    t0: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.states.ndim != 2 or self.states.shape[1] != NX:
            raise InvalidInputError("states must be (N+1, 6)")
        if self.controls.shape != (self.states.shape[0] - 1, NU):
            raise InvalidInputError("need exactly one control per interval")

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]

    @property
    def tf(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    def to_csv(self, path: str | Path) -> None:
        """Write ``t,q,qd,th1,th2,th1d,th2d,u1,u2,u3`` (last row repeats the final control)."""
        write_trajectory_csv(path, self)


def rollout(x0, controls, dt: float, params: PhysicalParams) -> Trajectory:
    """Integrate ``len(controls)`` RK4 steps from ``x0``."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    x0 = _as_state(x0)
    U = np.asarray(controls, dtype=float).reshape(-1, NU)
    _check_finite(x0, U)
    X = _rollout(x0, U, float(dt), params.packed())
    return Trajectory(dt=float(dt), states=X, controls=U)


def resample_zoh(controls: np.ndarray, dt_coarse: float, dt_fine: float) -> np.ndarray:
    """Repeat each coarse control over the fine steps it covers."""
    ratio = dt_coarse / dt_fine
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise InvalidInputError(
            f"coarse step {dt_coarse} is not an integer multiple of {dt_fine}")
    return np.repeat(np.asarray(controls, dtype=float), m, axis=0)


def write_trajectory_csv(path: str | Path, traj: Trajectory, extra_columns: dict | None = None) -> None:
    header = ["t", "q", "qd", "th1", "th2", "th1d", "th2d", "u1", "u2", "u3"]
    cols = dict(extra_columns or {})
    header += list(cols)
    U = np.vstack([traj.controls, traj.controls[-1:]]) if traj.n_steps else np.full((1, NU), np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [t, *traj.states[k], *U[k]] + [cols[c][k] for c in cols]
            w.writerow([f"{v:.10g}" for v in row])
