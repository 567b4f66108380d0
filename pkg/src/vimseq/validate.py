"""Self-checks run by the ``validate`` subcommand."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .costs import CostSpec
from .dynamics import dynamics, dynamics_jacobians, step, step_jacobians, spring_torques
from .energy import energy_report
from .ilqr import LinearQuadraticProblem, OcpSpec, ilqr, riccati_lqr, solve
from .params import PhysicalParams
from .tidc import MinJerkSegment, actuator_torque_jacobians, min_jerk

JAC_TOL = 1e-4


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


def random_state(rng: np.random.Generator, params: PhysicalParams) -> tuple[np.ndarray, np.ndarray]:
    """An in-bounds state/control pair away from the singular spring geometry."""
    x = np.array([
        rng.uniform(-1.0, 1.0),
        rng.uniform(-5.0, 5.0),
        rng.uniform(params.u1_min, params.u1_max),
        rng.uniform(params.theta2_min, params.theta2_max),
        rng.uniform(-5.0, 5.0),
        rng.uniform(-5.0, 5.0),
    ])
    u = rng.uniform(params.u_min, params.u_max)
    return x, u


def central_difference(fun: Callable[[np.ndarray], np.ndarray], z: np.ndarray,
                       h: float = 1e-6) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h * max(1.0, abs(z[i]))
        cols.append((np.asarray(fun(z + e)) - np.asarray(fun(z - e))) / (2 * e[i]))
    return np.column_stack(cols)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius-norm relative error of ``a`` against the reference ``b``."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def jacobian_errors(params: PhysicalParams, n: int = 1000, seed: int = 0) -> dict:
    """Largest relative FD error of each analytic derivative over ``n`` samples."""
    rng = np.random.default_rng(seed)
    worst = {"f_x": 0.0, "f_u": 0.0, "rk4_x": 0.0, "rk4_u": 0.0, "torque": 0.0}
    dt = 0.02
    for _ in range(n):
        x, u = random_state(rng, params)
        A, B = dynamics_jacobians(x, u, params)
        worst["f_x"] = max(worst["f_x"], rel_error(A, central_difference(lambda z: dynamics(z, u, params), x)))
        worst["f_u"] = max(worst["f_u"], rel_error(B, central_difference(lambda z: dynamics(x, z, params), u)))
        Fx, Fu = step_jacobians(x, u, dt, params)
        worst["rk4_x"] = max(worst["rk4_x"], rel_error(Fx, central_difference(lambda z: step(z, u, dt, params), x)))
        worst["rk4_u"] = max(worst["rk4_u"], rel_error(Fu, central_difference(lambda z: step(x, z, dt, params), u)))
        Jth, Jq, _ = actuator_torque_jacobians(x, params)
        fd = central_difference(lambda z: np.array([spring_torques(z, params)[0]]), x)[0]
        worst["torque"] = max(worst["torque"],
                              rel_error(np.array([Jq, Jth[0], Jth[1]]), fd[[0, 2, 3]]))
    return worst


def double_integrator(dt: float = 0.1):
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt * dt], [dt]])
    return A, B, np.diag([1.0, 0.1]), np.array([[0.01]]), np.diag([10.0, 1.0])


def riccati_agreement(n_steps: int = 50) -> tuple[float, float]:
    """(relative cost gap, max control gap) between iLQR and the Riccati solution."""
    A, B, Q, R, Qf = double_integrator()
    x0 = np.array([1.0, -0.5])
    U_ref, J_ref = riccati_lqr(A, B, Q, R, Qf, x0, n_steps)
    prob = LinearQuadraticProblem(A, B, Q, R, Qf, n_steps)
    res = ilqr(prob, x0, np.zeros((n_steps, 1)))
    return abs(res.cost - J_ref) / abs(J_ref), float(np.max(np.abs(res.U - U_ref)))


def energy_grid(params: PhysicalParams, dts=(0.002, 0.001, 0.0005)) -> tuple[list, list]:
    """``E_in`` and ``E_elec`` of a fixed reaching episode on successively finer grids."""
    ocp = OcpSpec(x0=np.array([0, 0, 0, math.pi / 24, 0, 0]), cost=CostSpec(target=0.7),
                  p_s=math.pi / 24)
    U = solve(ocp, params).trajectory.controls
    e_in, e_el = [], []
    for d in dts:
        rep, _ = energy_report(ocp.x0, U, ocp.dt, params, dt_fine=d)
        e_in.append(rep.E_in)
        e_el.append(rep.E_elec)
    return e_in, e_el


def run_checks(params: PhysicalParams, n_jacobian: int = 200) -> list[Check]:
    checks = []
    for name, err in jacobian_errors(params, n_jacobian).items():
        checks.append(Check(f"jacobian_{name}", err, JAC_TOL, err < JAC_TOL))
    gap_J, gap_U = riccati_agreement()
    checks.append(Check("riccati_cost", gap_J, 1e-6, gap_J < 1e-6))
    checks.append(Check("riccati_controls", gap_U, 1e-6, gap_U < 1e-6))
    e_in, e_el = energy_grid(params)
    d1, d2 = abs(e_in[0] - e_in[1]), abs(e_in[1] - e_in[2])
    ratio = d1 / d2 if d2 > 0 else math.inf
    checks.append(Check("energy_grid_ratio", ratio, 2.0, ratio >= 2.0))
    slack = min(b - a for a, b in zip(e_in, e_el))
    checks.append(Check("elec_exceeds_mech", slack, 0.0, slack >= 0.0))
    seg = MinJerkSegment(0.1, 0.9, 0.7)
    b0 = np.abs(np.array(min_jerk(seg, 0.0)) - [0.1, 0, 0, 60 * 0.8 / 0.7**3]).max()
    b1 = np.abs(np.array(min_jerk(seg, 0.7)) - [0.9, 0, 0, 60 * 0.8 / 0.7**3]).max()
    checks.append(Check("min_jerk_boundary", max(b0, b1), 1e-12, max(b0, b1) <= 1e-12))
    return checks


def write_checks_csv(path: str | Path, checks: list[Check]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "value", "threshold", "passed"])
        for c in checks:
            w.writerow([c.name, repr(c.value), repr(c.threshold), int(c.passed)])


def run_validation(spec) -> list[Check]:
    checks = run_checks(spec.params)
    spec.out.mkdir(parents=True, exist_ok=True)
    write_checks_csv(spec.out / "validate.csv", checks)
    return checks
