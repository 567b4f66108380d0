"""Fine-grid resimulation and energy accounting of a full episode."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import (
    InvalidInputError, Trajectory, _check_finite, _energy_integrals, resample_zoh,
)
from .params import PhysicalParams

DT_FINE = 0.001

E_IN = "E_in"
E_ELEC = "E_elec"


@dataclass(frozen=True)
class EnergyReport:
    """Positive mechanical and electrical work of one episode."""

    E_in: float
    E_elec: float
    E_in1: float
    E_in2: float
    E_elec1: float
    E_elec2: float
    J_p: float
    J_e: float
    E_damp: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


def energy_report(
    x0,
    controls: np.ndarray,
    dt_control: float,
    params: PhysicalParams,
    dt_fine: float = DT_FINE,
    performance: Optional[Callable[[Trajectory], float]] = None,
    objective: str = E_IN,
) -> tuple[EnergyReport, Trajectory]:
    """Resimulate an episode at ``dt_fine`` and integrate the motor powers.

    Parameters
    ----------
    x0 : array_like, shape (6,)
        Initial state of the episode.
    controls : ndarray, shape (N, 3)
        Controls on the ``dt_control`` grid; resampled by zero-order hold.
    dt_control : float
        Step of ``controls``; must be an integer multiple of ``dt_fine``.
    performance : callable, optional
        Maps the fine trajectory to ``J_p``; zero when omitted.
    objective : {"E_in", "E_elec"}
        Which work figure becomes ``J_e``.

    Returns
    -------
    report : EnergyReport
    fine : Trajectory
        The fine-grid trajectory the report was computed on.
    """
    if not dt_fine > 0:
        raise InvalidInputError("dt_fine must be positive")
    if objective not in (E_IN, E_ELEC):
        raise ValueError(f"unknown energy objective {objective!r}")
    x0 = np.asarray(x0, dtype=float)
    U = resample_zoh(controls, dt_control, dt_fine)
    _check_finite(x0, U)
    X, acc = _energy_integrals(x0, U, float(dt_fine), params.packed())
    fine = Trajectory(dt=float(dt_fine), states=X, controls=U)
    e_in1, e_in2, e_el1, e_el2 = (float(v) for v in acc)
    e_damp = 0.0
    if params.damping_consumes_energy:
        # power dissipated in the damping circuit, u3 * dmax * qd^2
        pw = params.max_damping * np.append(U[:, 2], U[-1, 2]) * X[:, 1] ** 2
        e_damp = float(dt_fine * (np.sum(pw) - 0.5 * (pw[0] + pw[-1])))
    e_in = e_in1 + e_in2
    e_el = e_el1 + e_el2 + e_damp
    j_p = float(performance(fine)) if performance is not None else 0.0
    report = EnergyReport(
        E_in=e_in, E_elec=e_el, E_in1=e_in1, E_in2=e_in2, E_elec1=e_el1,
        E_elec2=e_el2, J_p=j_p, J_e=e_in if objective == E_IN else e_el, E_damp=e_damp,
    )
    return report, fine
