"""Box-constrained iLQR and the single sub-movement optimal control problem.

The solver core is generic: it works on any object exposing ``rollout``,
``linearize``, ``cost``, ``cost_derivatives`` and box bounds (see
:class:`LinearQuadraticProblem` for the smallest example). Control bounds are
handled by clamping in the forward pass and by a projected-Newton box QP in
the backward pass whose clamped rows get zero feedback.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import costs as _costs
from .costs import CostSpec
from .dynamics import Trajectory, _linearize, _rk4, _rollout
from .params import PhysicalParams

log = logging.getLogger(__name__)

DT_COARSE = 0.02


class SolverDivergedError(RuntimeError):
    """Regularisation overflowed or the rollout produced non-finite values."""


# ---------------------------------------------------------------------------
# compiled backward pass


@njit(cache=True)
def _box_qp(H, g, lo, hi, x0):
    """min 0.5 x'Hx + g'x  s.t. lo <= x <= hi, projected Newton.

    Returns (x, free mask, ok). ``ok`` is False when the free block of H is
    not positive definite.
    """
    n = g.shape[0]
    x = np.minimum(np.maximum(x0, lo), hi)
    free = np.ones(n, dtype=np.bool_)
    for _ in range(50):
        grad = g + H @ x
        nf = 0
        for i in range(n):
            clamp_lo = x[i] <= lo[i] and grad[i] > 0.0
            clamp_hi = x[i] >= hi[i] and grad[i] < 0.0
            free[i] = not (clamp_lo or clamp_hi)
            if free[i]:
                nf += 1
        if nf == 0:
            break
        idx = np.empty(nf, dtype=np.int64)
        j = 0
        for i in range(n):
            if free[i]:
                idx[j] = i
                j += 1
        Hf = np.empty((nf, nf))
        gf = np.empty(nf)
        for a in range(nf):
            gf[a] = grad[idx[a]]
            for b in range(nf):
                Hf[a, b] = H[idx[a], idx[b]]
        # positive definiteness check on the free block
        for a in range(nf):
            if not Hf[a, a] > 0.0:
                return x, free, False
        eig = np.linalg.eigvalsh(Hf)
        if eig[0] <= 0.0:
            return x, free, False
        step_f = -np.linalg.solve(Hf, gf)
        if np.max(np.abs(gf)) < 1e-13:
            break
        dx = np.zeros(n)
        for a in range(nf):
            dx[idx[a]] = step_f[a]
        f0 = 0.5 * x @ (H @ x) + g @ x
        alpha = 1.0
        improved = False
        for _ls in range(30):
            xn = np.minimum(np.maximum(x + alpha * dx, lo), hi)
            fn = 0.5 * xn @ (H @ xn) + g @ xn
            if fn <= f0 + 0.1 * grad @ (xn - x):
                improved = True
                break
            alpha *= 0.6
        if not improved:
            break
        rel = f0 - fn
        x = xn
        if rel < 1e-14 * (1.0 + abs(f0)):
            break
    grad = g + H @ x
    for i in range(n):
        clamp_lo = x[i] <= lo[i] and grad[i] > 0.0
        clamp_hi = x[i] >= hi[i] and grad[i] < 0.0
        free[i] = not (clamp_lo or clamp_hi)
    return x, free, True


@njit(cache=True)
def _backward(Fx, Fu, lx, lu, lxx, luu, lux, Hx, Hxx, U, u_min, u_max, mu, k_prev):
    n = U.shape[0]
    nx = Fx.shape[1]
    nu = Fu.shape[2]
    k = np.zeros((n, nu))
    K = np.zeros((n, nu, nx))
    Vx = Hx.copy()
    Vxx = Hxx.copy()
    dV1 = 0.0
    dV2 = 0.0
    for t in range(n - 1, -1, -1):
        A = Fx[t]
        B = Fu[t]
        Qx = lx[t] + A.T @ Vx
        Qu = lu[t] + B.T @ Vx
        VA = Vxx @ A
        Qxx = lxx[t] + A.T @ VA
        Quu = luu[t] + B.T @ Vxx @ B
        Qux = lux[t] + B.T @ VA
        Qreg = Quu + mu * np.eye(nu)
        lo = u_min - U[t]
        hi = u_max - U[t]
        kt, free, ok = _box_qp(Qreg, Qu, lo, hi, k_prev[t])
        if not ok:
            return k, K, 0.0, 0.0, False
        Kt = np.zeros((nu, nx))
        nf = 0
        for i in range(nu):
            if free[i]:
                nf += 1
        if nf > 0:
            idx = np.empty(nf, dtype=np.int64)
            j = 0
            for i in range(nu):
                if free[i]:
                    idx[j] = i
                    j += 1
            Hf = np.empty((nf, nf))
            Rf = np.empty((nf, nx))
            for a in range(nf):
                for b in range(nf):
                    Hf[a, b] = Qreg[idx[a], idx[b]]
                Rf[a] = Qux[idx[a]]
            Kf = -np.linalg.solve(Hf, Rf)
            for a in range(nf):
                Kt[idx[a]] = Kf[a]
        k[t] = kt
        K[t] = Kt
        dV1 += kt @ Qu
        dV2 += 0.5 * kt @ (Quu @ kt)
        Vx = Qx + Kt.T @ (Quu @ kt) + Kt.T @ Qu + Qux.T @ kt
        Vxx = Qxx + Kt.T @ Quu @ Kt + Kt.T @ Qux + Qux.T @ Kt
        Vxx = 0.5 * (Vxx + Vxx.T)
    return k, K, dV1, dV2, True


@njit(cache=True)
def _forward_vsa(x0, Xbar, Ubar, k, K, alpha, u_min, u_max, dt, p):
    n = Ubar.shape[0]
    X = np.empty_like(Xbar)
    U = np.empty_like(Ubar)
    X[0] = x0
    for t in range(n):
        u = Ubar[t] + alpha * k[t] + K[t] @ (X[t] - Xbar[t])
        U[t] = np.minimum(np.maximum(u, u_min), u_max)
        X[t + 1] = _rk4(X[t], U[t], dt, p)
    return X, U


# ---------------------------------------------------------------------------
# solver


@dataclass
class SolverSettings:
    max_iter: int = 300
    rel_tol: float = 1e-6
    mu_init: float = 1e-6
    mu_min: float = 1e-6
    mu_max: float = 1e10
    mu_factor: float = 1.6
    line_search: tuple = tuple(10.0 ** np.linspace(0, -3, 11))

    @classmethod
    def from_dict(cls, d: dict) -> "SolverSettings":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "line_search" in known:
            known["line_search"] = tuple(known["line_search"])
        return cls(**known)


@dataclass
class IlqrResult:
    X: np.ndarray
    U: np.ndarray
    k: np.ndarray
    K: np.ndarray
    cost: float
    cost_history: list
    converged: bool
    iterations: int
    initial_cost: float


def ilqr(problem, x0: np.ndarray, U0: np.ndarray,
         settings: Optional[SolverSettings] = None) -> IlqrResult:
    """Run iLQR from the initial control guess ``U0``.

    The accepted-iterate cost sequence is non-increasing: a step is taken
    only when it strictly lowers the cost.
    """
    s = settings or SolverSettings()
    u_min = np.broadcast_to(np.asarray(problem.u_min, dtype=float), (U0.shape[1],)).copy()
    u_max = np.broadcast_to(np.asarray(problem.u_max, dtype=float), (U0.shape[1],)).copy()
    U = np.clip(np.asarray(U0, dtype=float), u_min, u_max)
    X = problem.rollout(x0, U)
    J = problem.cost(X, U)
    if not np.isfinite(J):
        raise SolverDivergedError("initial rollout is not finite")
    history = [J]
    J0 = J
    mu = s.mu_init
    dmu = 1.0
    k = np.zeros_like(U)
    K = np.zeros((U.shape[0], U.shape[1], X.shape[1]))
    converged = False
    it = 0
    for it in range(1, s.max_iter + 1):
        Fx, Fu = problem.linearize(X, U)
        lx, lu, lxx, luu, lux, Hx, Hxx = problem.cost_derivatives(X, U)
        while True:
            k, K, dV1, dV2, ok = _backward(Fx, Fu, lx, lu, lxx, luu, lux, Hx, Hxx,
                                           U, u_min, u_max, mu, k)
            if ok:
                break
            dmu = max(s.mu_factor, dmu * s.mu_factor)
            mu = max(s.mu_min, mu * dmu)
            if mu > s.mu_max:
                raise SolverDivergedError("regularisation exceeded mu_max in backward pass")
        expected = -(dV1 + dV2)
        if expected < s.rel_tol * 1e-3 * max(abs(J), 1e-12):
            # take the (tiny) full step anyway; on quadratic problems it is exact
            Xn, Un = problem.forward(x0, X, U, k, K, 1.0, u_min, u_max)
            Jn = problem.cost(Xn, Un)
            if np.isfinite(Jn) and Jn < J:
                X, U, J = Xn, Un, Jn
                history.append(J)
            converged = True
            break
        accepted = False
        for alpha in s.line_search:
            Xn, Un = problem.forward(x0, X, U, k, K, alpha, u_min, u_max)
            Jn = problem.cost(Xn, Un)
            if np.isfinite(Jn) and Jn < J:
                accepted = True
                break
        if accepted:
            dJ = J - Jn
            X, U, J = Xn, Un, Jn
            history.append(J)
            dmu = min(1.0 / s.mu_factor, dmu / s.mu_factor)
            mu = mu * dmu if mu * dmu > s.mu_min else 0.0
            if dJ < s.rel_tol * max(abs(J), 1e-12):
                converged = True
                break
        else:
            dmu = max(s.mu_factor, dmu * s.mu_factor)
            mu = max(s.mu_min, mu * dmu)
            if mu > s.mu_max:
                # no descent direction left at maximal damping
                converged = expected < s.rel_tol * max(abs(J), 1e-12) * 1e3
                break
    else:
        it = s.max_iter
    return IlqrResult(X=X, U=U, k=k, K=K, cost=J, cost_history=history,
                      converged=converged, iterations=it, initial_cost=J0)


# ---------------------------------------------------------------------------
# problems


class LinearQuadraticProblem:
    """``x+ = A x + B u``; cost ``sum (x'Qx + u'Ru) + x_N' Qf x_N``.

    Used to cross-check the solver against the Riccati recursion.
    """

    def __init__(self, A, B, Q, R, Qf, n_steps, u_min=-np.inf, u_max=np.inf):
        self.A = np.asarray(A, float)
        self.B = np.asarray(B, float)
        self.Q = np.asarray(Q, float)
        self.R = np.asarray(R, float)
        self.Qf = np.asarray(Qf, float)
        self.n_steps = n_steps
        self.u_min = u_min
        self.u_max = u_max

    def rollout(self, x0, U):
        X = np.empty((U.shape[0] + 1, self.A.shape[0]))
        X[0] = x0
        for t in range(U.shape[0]):
            X[t + 1] = self.A @ X[t] + self.B @ U[t]
        return X

    def forward(self, x0, Xbar, Ubar, k, K, alpha, u_min, u_max):
        X = np.empty_like(Xbar)
        U = np.empty_like(Ubar)
        X[0] = x0
        for t in range(Ubar.shape[0]):
            U[t] = np.clip(Ubar[t] + alpha * k[t] + K[t] @ (X[t] - Xbar[t]), u_min, u_max)
            X[t + 1] = self.A @ X[t] + self.B @ U[t]
        return X, U

    def linearize(self, X, U):
        n = U.shape[0]
        return np.broadcast_to(self.A, (n,) + self.A.shape).copy(), \
            np.broadcast_to(self.B, (n,) + self.B.shape).copy()

    def cost(self, X, U):
        return float(np.einsum("ti,ij,tj->", X[:-1], self.Q, X[:-1])
                     + np.einsum("ti,ij,tj->", U, self.R, U)
                     + X[-1] @ self.Qf @ X[-1])

    def cost_derivatives(self, X, U):
        n = U.shape[0]
        lx = 2.0 * X[:-1] @ self.Q
        lu = 2.0 * U @ self.R
        lxx = np.broadcast_to(2.0 * self.Q, (n,) + self.Q.shape).copy()
        luu = np.broadcast_to(2.0 * self.R, (n,) + self.R.shape).copy()
        lux = np.zeros((n, U.shape[1], X.shape[1]))
        return lx, lu, lxx, luu, lux, 2.0 * self.Qf @ X[-1], 2.0 * self.Qf


def riccati_lqr(A, B, Q, R, Qf, x0, n_steps):
    """Finite-horizon discrete LQR by backward Riccati recursion.

    Returns the optimal controls ``(n_steps, m)`` and the optimal cost for
    the objective used by :class:`LinearQuadraticProblem`.
    """
    P = np.asarray(Qf, float)
    gains = []
    for _ in range(n_steps):
        S = R + B.T @ P @ B
        L = np.linalg.solve(S, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ L)
        P = 0.5 * (P + P.T)
        gains.append(L)
    gains.reverse()
    x = np.asarray(x0, float)
    U = []
    for L in gains:
        u = -L @ x
        U.append(u)
        x = A @ x + B @ u
    return np.array(U), float(np.asarray(x0) @ P @ np.asarray(x0))


@dataclass(frozen=True)
class OcpSpec:
    """One reaching sub-movement.

    ``p_s`` overrides the lower bound of the pretension command; when
    ``theta2_init`` is given it also replaces ``th2`` of ``x0``.
    """

    x0: np.ndarray
    cost: CostSpec
    tf: float = 1.0
    t0: float = 0.0
    dt: float = DT_COARSE
    p_s: Optional[float] = None
    theta2_init: Optional[float] = None
    u_min: Optional[np.ndarray] = None
    u_max: Optional[np.ndarray] = None

    @property
    def n_steps(self) -> int:
        n = int(round((self.tf - self.t0) / self.dt))
        if n < 1 or abs(n * self.dt - (self.tf - self.t0)) > 1e-9:
            raise ValueError("horizon must be a positive multiple of dt")
        return n

    def bounds(self, params: PhysicalParams) -> tuple[np.ndarray, np.ndarray]:
        lo = params.u_min if self.u_min is None else np.asarray(self.u_min, float).copy()
        hi = params.u_max if self.u_max is None else np.asarray(self.u_max, float).copy()
        if self.p_s is not None:
            if not params.theta2_min - 1e-12 <= self.p_s <= params.theta2_max + 1e-12:
                raise ValueError(f"p_s={self.p_s} outside servo travel")
            lo[1] = self.p_s
        if np.any(lo > hi):
            raise ValueError("u_min must not exceed u_max")
        return lo, hi

    def initial_state(self) -> np.ndarray:
        x0 = np.asarray(self.x0, dtype=float).copy()
        if self.theta2_init is not None:
            x0[3] = self.theta2_init
        return x0


class VsaProblem:
    """Adapter exposing an :class:`OcpSpec` to the generic solver."""

    def __init__(self, ocp: OcpSpec, params: PhysicalParams):
        self.ocp = ocp
        self.p = params.packed()
        self.dt = ocp.dt
        self.u_min, self.u_max = ocp.bounds(params)

    def rollout(self, x0, U):
        return _rollout(x0, U, self.dt, self.p)

    def forward(self, x0, Xbar, Ubar, k, K, alpha, u_min, u_max):
        return _forward_vsa(x0, Xbar, Ubar, k, K, alpha, u_min, u_max, self.dt, self.p)

    def linearize(self, X, U):
        return _linearize(X, U, self.dt, self.p)

    def cost(self, X, U):
        if not np.all(np.isfinite(X)):
            return np.inf
        return _costs.trajectory_cost(X, U, self.ocp.cost, self.dt)

    def cost_derivatives(self, X, U):
        return _costs.cost_derivatives(X, U, self.ocp.cost, self.dt)


@dataclass
class IlqrSolution:
    trajectory: Trajectory
    k: np.ndarray
    K: np.ndarray
    cost_history: list
    cost: float
    converged: bool
    iterations: int
    initial_cost: float = field(default=np.nan)


def initial_controls(ocp: OcpSpec, params: PhysicalParams) -> np.ndarray:
    """Hold-at-start guess: ``u1 = q(0)``, ``u2 = p_s`` (or ``th2(0)``), ``u3 = 0.5``."""
    x0 = ocp.initial_state()
    lo, hi = ocp.bounds(params)
    u2 = ocp.p_s if ocp.p_s is not None else x0[3]
    u = np.clip(np.array([x0[0], u2, 0.5]), lo, hi)
    return np.tile(u, (ocp.n_steps, 1))


def solve(ocp: OcpSpec, params: PhysicalParams,
          settings: Optional[SolverSettings] = None,
          U0: Optional[np.ndarray] = None) -> IlqrSolution:
    """Solve one sub-movement with box-constrained iLQR."""
    problem = VsaProblem(ocp, params)
    x0 = ocp.initial_state()
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    guess = initial_controls(ocp, params) if U0 is None else np.asarray(U0, float)
    res = ilqr(problem, x0, guess, settings)
    log.debug("ilqr: %d iterations, cost %.6g -> %.6g, converged=%s",
              res.iterations, res.initial_cost, res.cost, res.converged)
    traj = Trajectory(dt=ocp.dt, states=res.X, controls=res.U, t0=ocp.t0)
    return IlqrSolution(trajectory=traj, k=res.k, K=res.K, cost_history=res.cost_history,
                        cost=res.cost, converged=res.converged, iterations=res.iterations,
                        initial_cost=res.initial_cost)
