"""Task adapters: map a policy vector to one full-sequence episode.

``SequentialReaching``
    Three chained reaching problems solved by iLQR; the policy holds the
    effort weight and the pretension floor of every sub-movement.
``DmpReaching``
    The same targets reached by open-loop primitive commands; the policy is
    the flat goal/weight vector of :class:`~vimseq.dmp.SeqPolicyEncoding`.
``SequentialTracking``
    Min-jerk tracking of four targets in a fixed total time; the policy holds
    the first three durations and the four stiffness presets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .costs import COMPOSITE, CostSpec, performance_cost, trajectory_cost
from .dmp import SeqPolicyEncoding, sequence_commands
from .dynamics import Trajectory, _rollout
from .energy import DT_FINE, E_IN, EnergyReport, energy_report
from .es import Evaluation
from .ilqr import DT_COARSE, OcpSpec, SolverSettings, solve
from .params import PhysicalParams
from .tidc import TOTAL_TIME, TidcGains, split_durations, track_sequence

REACH_TARGETS = (0.7, -0.35, 0.3)
TRACK_TARGETS = (math.pi / 5, -0.2, 1.0, 0.3)
X0 = (0.0, 0.0, 0.0, math.pi / 24, 0.0, 0.0)


@dataclass
class Episode:
    """A full sequence: coarse controls, fine trajectory and its report."""

    controls: np.ndarray
    dt_control: float
    fine: Trajectory
    report: EnergyReport
    segment_steps: list
    diagnostics: dict = field(default_factory=dict)

    def evaluation(self) -> Evaluation:
        return Evaluation(J_e=self.report.J_e, J_p=self.report.J_p, diagnostics=self.diagnostics)


def _fine_steps(horizons: Sequence[float], dt: float) -> list:
    edges = np.rint(np.concatenate([[0.0], np.cumsum(horizons)]) / dt).astype(int)
    return [int(n) for n in np.diff(edges)]


class SequentialReaching:
    """Policy ``(w_e_1..n, p_s_1..n)`` for chained iLQR reaching."""

    def __init__(self, params: PhysicalParams, targets: Sequence[float] = REACH_TARGETS,
                 horizon: float = 1.0, x0: Sequence[float] = X0, dt: float = DT_COARSE,
                 dt_fine: float = DT_FINE, objective: str = E_IN,
                 w_e_bounds: tuple = (0.1, 20.0), p_s_bounds: Optional[tuple] = None,
                 settings: Optional[SolverSettings] = None, damping_squared: bool = False):
        self.params = params
        self.targets = tuple(float(t) for t in targets)
        self.horizon = float(horizon)
        self.x0 = np.asarray(x0, dtype=float)
        self.dt = dt
        self.dt_fine = dt_fine
        self.objective = objective
        self.settings = settings
        self.damping_squared = damping_squared
        n = len(self.targets)
        ps = p_s_bounds or (params.theta2_min, params.theta2_max)
        self.lower = np.array([w_e_bounds[0]] * n + [ps[0]] * n, dtype=float)
        self.upper = np.array([w_e_bounds[1]] * n + [ps[1]] * n, dtype=float)
        self.labels = tuple(["w_e"] * n + ["p_s"] * n)

    def initial(self, w_e: float = 1.0, p_s: float = math.pi / 24) -> np.ndarray:
        n = len(self.targets)
        return np.array([w_e] * n + [p_s] * n)

    def performance(self, fine: Trajectory, steps: list) -> float:
        return performance_cost(fine.states[:, 0], fine.dt, self.targets, steps)

    def episode(self, xi) -> Episode:
        xi = np.asarray(xi, dtype=float)
        n = len(self.targets)
        if xi.shape != (2 * n,):
            raise ValueError(f"policy must have length {2 * n}")
        x = self.x0.copy()
        blocks = []
        converged = []
        for i, qs in enumerate(self.targets):
            cost = CostSpec(target=qs, w_e=float(xi[i]), damping_squared=self.damping_squared)
            ocp = OcpSpec(x0=x, cost=cost, tf=self.horizon, dt=self.dt, p_s=float(xi[n + i]))
            sol = solve(ocp, self.params, self.settings)
            blocks.append(sol.trajectory.controls)
            converged.append(sol.converged)
            x = sol.trajectory.final_state
        U = np.vstack(blocks)
        steps = _fine_steps([self.horizon] * n, self.dt_fine)
        report, fine = energy_report(self.x0, U, self.dt, self.params, self.dt_fine,
                                     performance=lambda tr: self.performance(tr, steps),
                                     objective=self.objective)
        return Episode(controls=U, dt_control=self.dt, fine=fine, report=report,
                       segment_steps=steps, diagnostics={"converged": converged})

    def evaluate(self, xi) -> Evaluation:
        return self.episode(xi).evaluation()


class DmpReaching:
    """Open-loop primitive commands for the reaching targets.

    With ``objective="composite"`` the optimised quantity ``J_e`` is the
    summed composite reaching cost and the performance constraint is left to
    the caller (pass an infinite ``J_bar`` to disable it). With
    ``objective="E_in"`` it is the input work, as for the other tasks.
    """

    def __init__(self, params: PhysicalParams, targets: Sequence[float] = REACH_TARGETS,
                 horizon: float = 1.0, x0: Sequence[float] = X0, dt: float = DT_COARSE,
                 dt_fine: float = DT_FINE, objective: str = COMPOSITE,
                 start_damping: float = 0.5):
        self.params = params
        self.targets = tuple(float(t) for t in targets)
        self.horizon = float(horizon)
        self.x0 = np.asarray(x0, dtype=float)
        self.dt = dt
        self.dt_fine = dt_fine
        self.objective = objective
        self.encoding = SeqPolicyEncoding(durations=tuple([self.horizon] * len(self.targets)),
                                          start=(self.x0[0], self.x0[3], start_damping))
        self.lower, self.upper = self.encoding.bounds()
        self.labels = tuple(["dmp-weight"] * self.encoding.n_weights
                            + ["dmp-goal"] * (self.encoding.dim - self.encoding.n_weights))

    def initial(self, preset: float = math.pi / 24, damping: float = 0.5) -> np.ndarray:
        return self.encoding.initial(self.targets, preset, damping)

    def composite_cost(self, U: np.ndarray) -> float:
        """Summed composite cost of the sequence on the control grid."""
        X = _rollout(self.x0, U, self.dt, self.params.packed())
        n = int(round(self.horizon / self.dt))
        total = 0.0
        for i, qs in enumerate(self.targets):
            sl = slice(i * n, (i + 1) * n)
            total += trajectory_cost(X[i * n:(i + 1) * n + 1], U[sl],
                                     CostSpec(target=qs, variant=COMPOSITE), self.dt)
        return total

    def episode(self, xi) -> Episode:
        U = sequence_commands(self.encoding, xi, self.dt)
        U = np.clip(U, self.params.u_min, self.params.u_max)
        steps = _fine_steps([self.horizon] * len(self.targets), self.dt_fine)
        energy_obj = E_IN if self.objective == COMPOSITE else self.objective
        report, fine = energy_report(
            self.x0, U, self.dt, self.params, self.dt_fine,
            performance=lambda tr: performance_cost(tr.states[:, 0], tr.dt, self.targets, steps),
            objective=energy_obj)
        diag = {}
        if self.objective == COMPOSITE:
            comp = self.composite_cost(U)
            diag["composite"] = comp
            report = EnergyReport(**{**report.as_dict(), "J_e": comp})
        return Episode(controls=U, dt_control=self.dt, fine=fine, report=report,
                       segment_steps=steps, diagnostics=diag)

    def evaluate(self, xi) -> Evaluation:
        return self.episode(xi).evaluation()


class SequentialTracking:
    """Policy ``(t_d_1..n-1, p_s_1..n)``; the last duration fills the total time."""

    def __init__(self, params: PhysicalParams, gains: Optional[TidcGains] = None,
                 targets: Sequence[float] = TRACK_TARGETS, total_time: float = TOTAL_TIME,
                 x0: Sequence[float] = X0, dt: float = DT_FINE, objective: str = E_IN,
                 duration_bounds: tuple = (0.3, 1.2), min_last: float = 0.3):
        self.params = params
        self.gains = gains or TidcGains.triple_pole(-15.0, metric=np.diag([1.0, 100.0]))
        self.targets = tuple(float(t) for t in targets)
        self.total_time = float(total_time)
        self.x0 = np.asarray(x0, dtype=float)
        self.dt = dt
        self.objective = objective
        self.min_last = min_last
        n = len(self.targets)
        self.lower = np.array([duration_bounds[0]] * (n - 1) + [params.theta2_min] * n)
        self.upper = np.array([duration_bounds[1]] * (n - 1) + [params.theta2_max] * n)
        self.labels = tuple(["t_d"] * (n - 1) + ["p_s"] * n)

    def initial(self, duration: Optional[float] = None, p_s: float = 0.2) -> np.ndarray:
        n = len(self.targets)
        d = self.total_time / n if duration is None else duration
        return np.array([d] * (n - 1) + [p_s] * n)

    def durations(self, xi) -> np.ndarray:
        n = len(self.targets)
        return split_durations(np.asarray(xi, float)[: n - 1], self.total_time, self.min_last)

    def episode(self, xi) -> Episode:
        xi = np.asarray(xi, dtype=float)
        n = len(self.targets)
        if xi.shape != (2 * n - 1,):
            raise ValueError(f"policy must have length {2 * n - 1}")
        ep = track_sequence(self.x0, self.targets, self.durations(xi), xi[n - 1:],
                            self.gains, self.params, dt=self.dt, objective=self.objective)
        return Episode(controls=ep.trajectory.controls, dt_control=self.dt, fine=ep.trajectory,
                       report=ep.report, segment_steps=ep.segment_steps,
                       diagnostics={"rank_deficient_steps": ep.rank_deficient_steps,
                                    "durations": [s * self.dt for s in ep.segment_steps]})

    def evaluate(self, xi) -> Evaluation:
        return self.episode(xi).evaluation()
