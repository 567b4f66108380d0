"""Physical constants of the single-joint variable impedance actuator.

The actuator is a MACCEPA-type joint: servo 1 sets the equilibrium position,
servo 2 winds a drum that pretensions the spring, and a duty-cycled circuit
adds viscous damping at the joint.

Configuration files group the constants by subsystem (all SI units)::

    link    inertia [kg m^2], joint_friction [N m s/rad]
    spring  spring_const [N/m], lever_B [m], lever_C [m], drum_radius [m],
            load_arm [m] (lever of the spring force on servo 2; null means
            drum_radius, 1.0 leaves the load as the bare spring force)
    servo   bandwidth [1/s], theta2_min [rad], theta2_max [rad],
            u1_min [rad], u1_max [rad]
    damping max_damping [N m s/rad], consumes_energy [bool]
    motor   resistance [Ohm], torque_const [N m/A], gear_ratio [-],
            rotor_inertia [kg m^2] (reflected to the output shaft),
            friction [N m s/rad] (reflected to the output shaft)

Keys starting with an underscore are ignored, so a file may carry its own
``_units`` notes.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

__all__ = [
    "PhysicalParams",
    "ConfigError",
    "default_params",
    "load_config",
    "default_config",
]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


# Field layout of the packed parameter vector consumed by the compiled kernels.
I_INERTIA = 0
I_FRICTION = 1
I_KAPPA = 2
I_B = 3
I_C = 4
I_R = 5
I_BETA = 6
I_DMAX = 7
I_RM = 8
I_KT = 9
I_NG = 10
I_JM = 11
I_BF = 12
I_TAU_EXT = 13
I_L2ARM = 14
N_PACKED = 15

_GROUPS = {
    "link": ("inertia", "joint_friction"),
    "spring": ("spring_const", "lever_B", "lever_C", "drum_radius", "load_arm"),
    "servo": ("bandwidth", "theta2_min", "theta2_max", "u1_min", "u1_max"),
    "damping": ("max_damping", "consumes_energy"),
    "motor": ("resistance", "torque_const", "gear_ratio", "rotor_inertia", "friction"),
}

# config key -> dataclass field
_FIELD_FOR_KEY = {
    "bandwidth": "servo_bandwidth",
    "resistance": "motor_resistance",
    "rotor_inertia": "rotor_inertia",
    "friction": "motor_friction",
}


@dataclass(frozen=True)
class PhysicalParams:
    """Immutable set of actuator and motor constants."""

    inertia: float = 0.0036
    joint_friction: float = 0.0077
    spring_const: float = 394.0
    lever_B: float = 0.035
    lever_C: float = 0.135
    drum_radius: float = 0.015
    servo_bandwidth: float = 40.0
    max_damping: float = 0.0165
    motor_resistance: float = 5.2
    torque_const: float = 0.0061
    gear_ratio: float = 212.6
    rotor_inertia: float = 3.0e-3
    motor_friction: float = 2.0e-3
    u1_min: float = -math.pi / 2
    u1_max: float = math.pi / 2
    theta2_min: float = 0.0
    theta2_max: float = math.pi / 2
    tau_ext: float = 0.0
    load_arm: Optional[float] = None
    damping_consumes_energy: bool = False

    def __post_init__(self) -> None:
        if self.load_arm is not None and not (np.isfinite(self.load_arm) and self.load_arm > 0):
            raise ConfigError(f"load_arm must be strictly positive, got {self.load_arm!r}")
        for name in ("inertia", "spring_const", "servo_bandwidth",
                     "motor_resistance", "torque_const", "gear_ratio"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be strictly positive, got {v!r}")
        for name in ("max_damping", "joint_friction", "rotor_inertia",
                     "motor_friction", "lever_B", "lever_C", "drum_radius"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be non-negative, got {v!r}")
        if not self.u1_min < self.u1_max:
            raise ConfigError("u1_min must be below u1_max")
        if not self.theta2_min < self.theta2_max:
            raise ConfigError("theta2_min must be below theta2_max")

    @property
    def u_min(self) -> np.ndarray:
        return np.array([self.u1_min, self.theta2_min, 0.0])

    @property
    def u_max(self) -> np.ndarray:
        return np.array([self.u1_max, self.theta2_max, 1.0])

    @property
    def servo2_lever(self) -> float:
        """Arm converting the spring force into the load torque on servo 2."""
        return self.drum_radius if self.load_arm is None else self.load_arm

    @property
    def pretension_offset(self) -> float:
        """|C - B|, the spring elongation removed by the lever geometry."""
        return abs(self.lever_C - self.lever_B)

    def packed(self) -> np.ndarray:
        """Flat float vector for the numba kernels (see ``I_*`` indices)."""
        p = np.empty(N_PACKED)
        p[I_INERTIA] = self.inertia
        p[I_FRICTION] = self.joint_friction
        p[I_KAPPA] = self.spring_const
        p[I_B] = self.lever_B
        p[I_C] = self.lever_C
        p[I_R] = self.drum_radius
        p[I_BETA] = self.servo_bandwidth
        p[I_DMAX] = self.max_damping
        p[I_RM] = self.motor_resistance
        p[I_KT] = self.torque_const
        p[I_NG] = self.gear_ratio
        p[I_JM] = self.rotor_inertia
        p[I_BF] = self.motor_friction
        p[I_TAU_EXT] = self.tau_ext
        p[I_L2ARM] = self.servo2_lever
        return p

    def replace(self, **changes: Any) -> "PhysicalParams":
        return dataclasses.replace(self, **changes)

    # -- (de)serialisation -------------------------------------------------

    @classmethod
    def from_sections(cls, section: Mapping[str, Any]) -> "PhysicalParams":
        kwargs: dict[str, Any] = {}
        for group, keys in _GROUPS.items():
            sub = section.get(group, {})
            if not isinstance(sub, Mapping):
                raise ConfigError(f"physical.{group} must be a mapping")
            unknown = {k for k in sub if not k.startswith("_")} - set(keys)
            if unknown:
                raise ConfigError(f"unknown keys in physical.{group}: {sorted(unknown)}")
            for key in keys:
                if key not in sub:
                    continue
                if group == "damping" and key == "consumes_energy":
                    kwargs["damping_consumes_energy"] = bool(sub[key])
                elif key == "load_arm" and sub[key] is None:
                    kwargs["load_arm"] = None
                elif group == "motor" and key in ("rotor_inertia", "friction"):
                    kwargs[_FIELD_FOR_KEY[key]] = float(sub[key])
                else:
                    kwargs[_FIELD_FOR_KEY.get(key, key)] = float(sub[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_sections(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}
        for group, keys in _GROUPS.items():
            out[group] = {}
            for key in keys:
                if group == "damping" and key == "consumes_energy":
                    out[group][key] = self.damping_consumes_energy
                else:
                    out[group][key] = getattr(self, _FIELD_FOR_KEY.get(key, key))
        return out


def default_params() -> PhysicalParams:
    return PhysicalParams.from_sections(default_config()["physical"])


def default_config() -> dict[str, Any]:
    """The shipped configuration (``vimseq/data/default.json``)."""
    text = resources.files("vimseq").joinpath("data/default.json").read_text()
    return json.loads(text)


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Load a JSON config and overlay it on the shipped defaults.

    Only the ``physical``, ``task``, ``es`` and ``solver`` sections are
    recognised. Nested mappings are merged key by key.
    """
    cfg = default_config()
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a mapping")
    unknown = {k for k in user if not k.startswith("_")} - {"physical", "task", "es", "solver"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    _merge(cfg, user)
    PhysicalParams.from_sections(cfg["physical"])  # validate early
    return cfg


def _merge(base: dict, over: Mapping) -> None:
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
