"""Reaching costs for a single sub-movement.

Two variants are supported:

``fast-reach``
    ``l = 1000 (q - q*)^2 + w_e ((u1 - q*)^2 + u2^2 + 1e-3 (u3 - 0.5))`` and
    ``H = 1000 (q(tf) - q*)^2``.  The damping term is linear as written; set
    ``damping_squared=True`` to use ``(u3 - 0.5)^2`` instead.

``composite``
    ``l = 1000 (q - q*)^2 + 100 (u1 - q*)^2 + 100 u2^2 + 1e-3 u3`` and
    ``H = 1000 ((q(tf) - q*)^2 + qd(tf)^2)``; the flat DMP baseline
    optimises the sum of these over the sequence.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

FAST_REACH = "fast-reach"
COMPOSITE = "composite"


@dataclass(frozen=True)
class CostSpec:
    target: float
    w_e: float = 1.0
    variant: str = FAST_REACH
    task_weight: float = 1000.0
    damping_offset: float = 0.5
    damping_weight: float = 1e-3
    damping_squared: bool = False

    def __post_init__(self) -> None:
        if not self.w_e >= 0:
            raise ValueError(f"w_e must be non-negative, got {self.w_e}")
        if self.variant not in (FAST_REACH, COMPOSITE):
            raise ValueError(f"unknown cost variant {self.variant!r}")


def running_cost(state, control, cost: CostSpec, t: float = 0.0) -> float:
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    qs = cost.target
    perf = cost.task_weight * (x[0] - qs) ** 2
    if cost.variant == COMPOSITE:
        return float(perf + 100.0 * (u[0] - qs) ** 2 + 100.0 * u[1] ** 2
                     + cost.damping_weight * u[2])
    d = u[2] - cost.damping_offset
    damp = d * d if cost.damping_squared else d
    return float(perf + cost.w_e * ((u[0] - qs) ** 2 + u[1] ** 2 + cost.damping_weight * damp))


def terminal_cost(state, cost: CostSpec) -> float:
    x = np.asarray(state, dtype=float)
    val = cost.task_weight * (x[0] - cost.target) ** 2
    if cost.variant == COMPOSITE:
        val += cost.task_weight * x[1] ** 2
    return float(val)


def trajectory_cost(X: np.ndarray, U: np.ndarray, cost: CostSpec, dt: float) -> float:
    """Discrete objective ``sum_k l(x_k, u_k) dt + H(x_N)``."""
    qs = cost.target
    perf = cost.task_weight * (X[:-1, 0] - qs) ** 2
    if cost.variant == COMPOSITE:
        eff = 100.0 * (U[:, 0] - qs) ** 2 + 100.0 * U[:, 1] ** 2 + cost.damping_weight * U[:, 2]
    else:
        d = U[:, 2] - cost.damping_offset
        damp = d * d if cost.damping_squared else d
        eff = cost.w_e * ((U[:, 0] - qs) ** 2 + U[:, 1] ** 2 + cost.damping_weight * damp)
    return float(np.sum(perf + eff) * dt + terminal_cost(X[-1], cost))


def cost_derivatives(X: np.ndarray, U: np.ndarray, cost: CostSpec, dt: float):
    """Gradients and Hessians of the discrete objective along a trajectory.

    Returns ``lx (N,6), lu (N,3), lxx (N,6,6), luu (N,3,3), lux (N,3,6)``
    for the running terms (already scaled by ``dt``) and ``Hx (6,), Hxx (6,6)``.
    """
    n = U.shape[0]
    qs = cost.target
    w = cost.task_weight
    lx = np.zeros((n, 6))
    lu = np.zeros((n, 3))
    lxx = np.zeros((n, 6, 6))
    luu = np.zeros((n, 3, 3))
    lux = np.zeros((n, 3, 6))
    lx[:, 0] = 2.0 * w * (X[:-1, 0] - qs) * dt
    lxx[:, 0, 0] = 2.0 * w * dt
    if cost.variant == COMPOSITE:
        lu[:, 0] = 200.0 * (U[:, 0] - qs) * dt
        lu[:, 1] = 200.0 * U[:, 1] * dt
        lu[:, 2] = cost.damping_weight * dt
        luu[:, 0, 0] = 200.0 * dt
        luu[:, 1, 1] = 200.0 * dt
    else:
        we = cost.w_e
        lu[:, 0] = 2.0 * we * (U[:, 0] - qs) * dt
        lu[:, 1] = 2.0 * we * U[:, 1] * dt
        luu[:, 0, 0] = 2.0 * we * dt
        luu[:, 1, 1] = 2.0 * we * dt
        if cost.damping_squared:
            lu[:, 2] = 2.0 * we * cost.damping_weight * (U[:, 2] - cost.damping_offset) * dt
            luu[:, 2, 2] = 2.0 * we * cost.damping_weight * dt
        else:
            lu[:, 2] = we * cost.damping_weight * dt
    Hx = np.zeros(6)
    Hxx = np.zeros((6, 6))
    Hx[0] = 2.0 * w * (X[-1, 0] - qs)
    Hxx[0, 0] = 2.0 * w
    if cost.variant == COMPOSITE:
        Hx[1] = 2.0 * w * X[-1, 1]
        Hxx[1, 1] = 2.0 * w
    return lx, lu, lxx, luu, lux, Hx, Hxx


def _trapz(y: np.ndarray, dt: float) -> float:
    if y.size < 2:
        return 0.0
    return float(dt * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def performance_cost(q: np.ndarray, dt: float, targets: Sequence[float],
                     steps: Sequence[int], weight: float = 1000.0,
                     reference: np.ndarray | None = None) -> float:
    """Reaching performance over a sequence of segments.

    ``J_p = sum_i weight (q(tf_i) - q*_i)^2 + integral weight (q - r)^2 dt``
    with ``r = q*_i`` on segment ``i``, or the given ``reference`` signal
    (same grid as ``q``) for tracking tasks. ``steps`` lists the number of
    intervals in each segment.
    """
    q = np.asarray(q, dtype=float)
    if sum(steps) != q.size - 1:
        raise ValueError(f"segments cover {sum(steps)} steps, signal has {q.size - 1}")
    total = 0.0
    start = 0
    for qs, n in zip(targets, steps):
        end = start + n
        seg = q[start:end + 1]
        ref = qs if reference is None else reference[start:end + 1]
        total += weight * (seg[-1] - qs) ** 2 + weight * _trapz((seg - ref) ** 2, dt)
        start = end
    return float(total)
