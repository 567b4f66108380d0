"""Performance/energy trade-off sweeps over effort weight and pretension."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .costs import trajectory_cost
from .energy import DT_FINE, energy_report
from .ilqr import OcpSpec, SolverSettings, solve
from .params import PhysicalParams

log = logging.getLogger(__name__)

W_E_GRID = (0.1, 0.3, 1.0, 3.0, 10.0, 30.0)
P_S_GRID = tuple(round(0.1 + 0.2 * i, 10) for i in range(8))
FIELDS = ("w_e", "p_s", "J_perf", "E_in", "E_elec", "converged")


@dataclass(frozen=True)
class FrontierRow:
    w_e: float
    p_s: float
    J_perf: float
    E_in: float
    E_elec: float
    converged: bool


def frontier_point(base: OcpSpec, w_e: float, p_s: float, params: PhysicalParams,
                   settings: Optional[SolverSettings] = None,
                   dt_fine: float = DT_FINE) -> FrontierRow:
    """Solve ``base`` with the given weight and with both ``th2(0)`` and the
    pretension floor set to ``p_s``; failures give a NaN row.

    ``J_perf`` is the task part of the solver objective (the same cost with
    ``w_e = 0``) on the solver grid, so it is the quantity actually traded
    against effort. Energies come from the fine resimulation.
    """
    ocp = replace(base, cost=replace(base.cost, w_e=float(w_e)), p_s=float(p_s),
                  theta2_init=float(p_s))
    try:
        sol = solve(ocp, params, settings)
        tr = sol.trajectory
        perf = trajectory_cost(tr.states, tr.controls, replace(ocp.cost, w_e=0.0), ocp.dt)
        rep, _ = energy_report(ocp.initial_state(), tr.controls, ocp.dt, params, dt_fine)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        log.warning("frontier point w_e=%g p_s=%g failed: %s", w_e, p_s, exc)
        return FrontierRow(w_e, p_s, np.nan, np.nan, np.nan, False)
    return FrontierRow(float(w_e), float(p_s), perf, rep.E_in, rep.E_elec, sol.converged)


def _point(args) -> FrontierRow:
    return frontier_point(*args)


def frontier_sweep(w_e_grid: Sequence[float], p_s_grid: Sequence[float], base: OcpSpec,
                   params: PhysicalParams, settings: Optional[SolverSettings] = None,
                   dt_fine: float = DT_FINE, jobs: int = 1) -> list[FrontierRow]:
    """One row per grid point, ordered by ``p_s`` then ``w_e``."""
    if len(w_e_grid) == 0 or len(p_s_grid) == 0:
        raise ValueError("grids must be non-empty")
    tasks = [(base, w, p, params, settings, dt_fine) for p in p_s_grid for w in w_e_grid]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_point, tasks))
    return [_point(t) for t in tasks]


def non_dominated(rows: Sequence[FrontierRow]) -> bool:
    """True when no finite row is beaten by another in both J_perf and E_in."""
    pts = [(r.J_perf, r.E_in) for r in rows if np.isfinite(r.J_perf) and np.isfinite(r.E_in)]
    for i, (a1, b1) in enumerate(pts):
        for j, (a2, b2) in enumerate(pts):
            if i != j and a2 <= a1 and b2 <= b1 and (a2 < a1 or b2 < b1):
                return False
    return True


def write_frontier_csv(path: str | Path, rows: Sequence[FrontierRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in rows:
            w.writerow([repr(r.w_e), repr(r.p_s), repr(r.J_perf), repr(r.E_in),
                        repr(r.E_elec), int(r.converged)])
