"""Discrete dynamic movement primitives for actuator command profiles.

Each channel ``m`` follows

    tau * thd = z
    tau * zd  = alpha_z * (beta_z * (g - th) - z) + s * a_m * f_m(s)
    tau * sd  = -alpha_s * s

with ``a_m = g_m - th_m(0)`` and ``f_m`` a normalised mixture of Gaussian
bases in the phase ``s``. The phase is evaluated in closed form.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ALPHA_Z = 25.0
ALPHA_S = 8.0
N_BASIS = 10


class InvalidEncodingError(ValueError):
    """Policy vector of the wrong size or non-finite entries."""


def basis_centers(n: int, alpha_s: float = ALPHA_S) -> np.ndarray:
    """Centres spaced evenly in time, i.e. geometrically in phase."""
    if n == 1:
        return np.ones(1)
    return np.exp(-alpha_s * np.arange(n) / (n - 1))


def basis_widths(centers: np.ndarray) -> np.ndarray:
    """Widths such that neighbouring bases cross at half activation."""
    if centers.size == 1:
        return np.ones(1)
    gaps = np.abs(np.diff(centers))
    half = np.append(gaps, gaps[-1]) / 2.0
    return half / math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class DmpParams:
    """A multi-channel primitive.

    Parameters
    ----------
    tau : float
        Duration scale [s].
    goal, start : array_like, shape (m,)
        Goal and initial value of each channel.
    weights : array_like, shape (m, N)
        Forcing weights; ``N`` is the basis count.
    """

    tau: float
    goal: np.ndarray
    start: np.ndarray
    weights: np.ndarray
    alpha_z: float = ALPHA_Z
    beta_z: float = ALPHA_Z / 4.0
    alpha_s: float = ALPHA_S
    centers: np.ndarray = field(default=None)  # type: ignore[assignment]
    widths: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        goal = np.atleast_1d(np.asarray(self.goal, dtype=float))
        start = np.atleast_1d(np.asarray(self.start, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = w[None, :]
        if not (self.tau > 0 and self.alpha_z > 0 and self.beta_z > 0 and self.alpha_s > 0):
            raise ValueError("tau, alpha_z, beta_z and alpha_s must be positive")
        if goal.shape != start.shape or w.shape[0] != goal.size or w.shape[1] < 1:
            raise ValueError("goal, start and weights disagree on the channel count")
        n = w.shape[1]
        c = basis_centers(n, self.alpha_s) if self.centers is None else np.asarray(self.centers, float)
        h = basis_widths(c) if self.widths is None else np.asarray(self.widths, float)
        if c.shape != (n,) or h.shape != (n,) or np.any(h <= 0):
            raise ValueError("centers and widths must have one positive entry per basis")
        for name, val in (("goal", goal), ("start", start), ("weights", w),
                          ("centers", c), ("widths", h)):
            object.__setattr__(self, name, val)

    @property
    def n_channels(self) -> int:
        return self.goal.size

    @property
    def n_basis(self) -> int:
        return self.weights.shape[1]

    def phase(self, t) -> np.ndarray:
        return np.exp(-self.alpha_s * np.asarray(t, dtype=float) / self.tau)

    def basis(self, s) -> np.ndarray:
        """Activations, shape ``(..., N)``."""
        s = np.asarray(s, dtype=float)[..., None]
        return np.exp(-((s - self.centers) ** 2) / (2.0 * self.widths**2))

    def forcing(self, s) -> np.ndarray:
        """The scaled forcing ``s * a * f(s)``, shape ``(..., m)``."""
        psi = self.basis(s)
        f = psi @ self.weights.T / psi.sum(axis=-1, keepdims=True)
        return np.asarray(s, dtype=float)[..., None] * (self.goal - self.start) * f

    def to_dict(self) -> dict:
        return {"tau": self.tau, "goal": self.goal.tolist(), "start": self.start.tolist(),
                "weights": self.weights.tolist(), "alpha_z": self.alpha_z,
                "beta_z": self.beta_z, "alpha_s": self.alpha_s}

    @classmethod
    def from_dict(cls, d: dict) -> "DmpParams":
        return cls(**{k: d[k] for k in ("tau", "goal", "start", "weights")},
                   **{k: d[k] for k in ("alpha_z", "beta_z", "alpha_s") if k in d})


@dataclass(frozen=True)
class DmpTrajectory:
    times: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray


def dmp_rollout(params: DmpParams, dt: float, duration: float | None = None) -> DmpTrajectory:
    """Integrate the primitive with RK4 on a uniform grid.

    The grid has ``round(duration / dt)`` steps (``duration`` defaults to
    ``tau``) and includes both end points.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    T = params.tau if duration is None else float(duration)
    n = max(int(round(T / dt)), 1)
    tau, az, bz, g = params.tau, params.alpha_z, params.beta_z, params.goal

    def rhs(th, z, t):
        acc = az * (bz * (g - th) - z) + params.forcing(params.phase(t))
        return z / tau, acc / tau

    th = params.start.copy()
    z = np.zeros_like(th)
    out_th = np.empty((n + 1, th.size))
    out_z = np.empty_like(out_th)
    out_th[0], out_z[0] = th, z
    for k in range(n):
        t = k * dt
        a1, b1 = rhs(th, z, t)
        a2, b2 = rhs(th + 0.5 * dt * a1, z + 0.5 * dt * b1, t + 0.5 * dt)
        a3, b3 = rhs(th + 0.5 * dt * a2, z + 0.5 * dt * b2, t + 0.5 * dt)
        a4, b4 = rhs(th + dt * a3, z + dt * b3, t + dt)
        th = th + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        z = z + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        out_th[k + 1], out_z[k + 1] = th, z
    return DmpTrajectory(times=dt * np.arange(n + 1), theta=out_th, theta_dot=out_z / tau)


@dataclass(frozen=True)
class SeqPolicyEncoding:
    """Flat policy vector for a chain of three-channel primitives.

    Layout: all shape weights ordered (submovement, channel, basis), followed
    by all goals ordered (submovement, channel). Submovement ``i`` starts at
    the goal of submovement ``i - 1``; the first starts at ``start``.
    """

    durations: tuple
    start: tuple = (0.0, math.pi / 24, 0.5)
    goal_min: tuple = (-math.pi / 3, math.pi / 24, 0.0)
    goal_max: tuple = (math.pi / 3, math.pi / 2, 1.0)
    n_basis: int = N_BASIS

    @property
    def n_sub(self) -> int:
        return len(self.durations)

    @property
    def n_channels(self) -> int:
        return len(self.start)

    @property
    def n_weights(self) -> int:
        return self.n_sub * self.n_channels * self.n_basis

    @property
    def dim(self) -> int:
        return self.n_weights + self.n_sub * self.n_channels

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box for the flat vector; shape weights are unbounded."""
        lo = np.concatenate([np.full(self.n_weights, -np.inf), np.tile(self.goal_min, self.n_sub)])
        hi = np.concatenate([np.full(self.n_weights, np.inf), np.tile(self.goal_max, self.n_sub)])
        return lo, hi

    def initial(self, targets: Sequence[float], preset: float = math.pi / 24,
                damping: float = 0.5) -> np.ndarray:
        """Zero weights, EP goals at the targets, uniform preset and duty."""
        goals = np.column_stack([targets, np.full(len(targets), preset),
                                 np.full(len(targets), damping)])
        return np.concatenate([np.zeros(self.n_weights), goals.ravel()])

    def encode(self, xi) -> list[DmpParams]:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.dim,):
            raise InvalidEncodingError(f"policy vector must have length {self.dim}, got {xi.shape}")
        if not np.all(np.isfinite(xi)):
            raise InvalidEncodingError("policy vector must be finite")
        lo, hi = self.bounds()
        xi = np.clip(xi, lo, hi)
        W = xi[: self.n_weights].reshape(self.n_sub, self.n_channels, self.n_basis)
        G = xi[self.n_weights:].reshape(self.n_sub, self.n_channels)
        out = []
        start = np.asarray(self.start, dtype=float)
        for i in range(self.n_sub):
            out.append(DmpParams(tau=float(self.durations[i]), goal=G[i], start=start, weights=W[i]))
            start = G[i]
        return out

    def decode(self, params: Sequence[DmpParams]) -> np.ndarray:
        if len(params) != self.n_sub:
            raise InvalidEncodingError(f"expected {self.n_sub} primitives, got {len(params)}")
        W = np.stack([p.weights for p in params])
        G = np.stack([p.goal for p in params])
        if W.shape != (self.n_sub, self.n_channels, self.n_basis):
            raise InvalidEncodingError(f"weight block has shape {W.shape}")
        return np.concatenate([W.ravel(), G.ravel()])


def sequence_commands(encoding: SeqPolicyEncoding, xi, dt: float) -> np.ndarray:
    """Concatenated command samples ``(sum n_i, m)`` on the control grid.

    Each primitive contributes its samples at ``t = 0, dt, ...`` up to but
    excluding its end point, which the next primitive covers.
    """
    rows = []
    for p in encoding.encode(xi):
        rows.append(dmp_rollout(p, dt).theta[:-1])
    return np.vstack(rows)


def write_commands_csv(path: str | Path, commands: np.ndarray, dt: float) -> None:
    names = ["t"] + [f"u{i + 1}" for i in range(commands.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for k, row in enumerate(commands):
            w.writerow([repr(round(k * dt, 12))] + [repr(float(v)) for v in row])
