"""Outer-loop policy improvement over sequence hyper-parameters.

Each iteration draws ``K`` box-clamped Gaussian perturbations of the policy
vector, evaluates them through a task adapter, pools them with the ``mu``
best records of the previous iteration and moves the policy by a
reward-weighted average of the pooled perturbations.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

PENALTY = 1e4


class TaskAdapter(Protocol):
    """What the optimiser needs from a task."""

    lower: np.ndarray
    upper: np.ndarray
    labels: tuple

    def evaluate(self, xi: np.ndarray) -> "Evaluation": ...


@dataclass(frozen=True)
class Evaluation:
    """Outcome of one full-sequence rollout."""

    J_e: float
    J_p: float
    failed: bool = False
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EsConfig:
    """Hyper-parameters of the optimiser.

    ``sigma`` holds the diagonal of the exploration covariance (variances,
    not standard deviations).
    """

    K: int
    mu: int
    gamma: float
    sigma: tuple
    c: float = 10.0
    sigma_tol: float = 0.1
    penalty: float = PENALTY
    max_iters: int = 100
    seed: int = 0
    conv_tol: float = 1e-3
    patience: int = 10

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim != 1 or np.any(~np.isfinite(sig)) or np.any(sig <= 0):
            raise ValueError("sigma must be a vector of positive variances")
        object.__setattr__(self, "sigma", tuple(float(s) for s in sig))
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.sigma_tol >= 0:
            raise ValueError("sigma_tol must be non-negative")
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")
        if self.max_iters < 0 or self.patience < 1:
            raise ValueError("max_iters must be >= 0 and patience >= 1")

    @classmethod
    def from_dict(cls, d: dict, dim: int) -> "EsConfig":
        d = {k: v for k, v in d.items() if not k.startswith("_")}
        sigma = d.pop("sigma")
        if np.isscalar(sigma):
            sigma = [float(sigma)] * dim
        if len(sigma) != dim:
            raise ValueError(f"sigma has {len(sigma)} entries, policy has {dim}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown ES settings: {sorted(unknown)}")
        return cls(sigma=tuple(sigma), **d)


@dataclass(frozen=True)
class RolloutRecord:
    eps: np.ndarray
    xi: np.ndarray
    J_e: float
    J_p: float
    J: float
    failed: bool = False
    diagnostics: dict = field(default_factory=dict)

    def with_eps(self, eps: np.ndarray) -> "RolloutRecord":
        return RolloutRecord(eps=eps, xi=self.xi, J_e=self.J_e, J_p=self.J_p, J=self.J,
                             failed=self.failed, diagnostics=self.diagnostics)


def episodic_cost(J_e: float, J_p: float, J_bar: float, penalty: float = PENALTY) -> float:
    """Energy plus a linear penalty on the performance excess over ``J_bar``."""
    return J_e + penalty * max(0.0, J_p - J_bar)


def substream(seed: int, iteration: int, k: int) -> np.random.Generator:
    """Independent counter-based stream for rollout ``k`` of ``iteration``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, iteration, k])))


def perturb(xi, lower, upper, sigma, gamma: float, n: int,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``eps ~ N(0, gamma^(n-1) diag(sigma))`` and clamp ``xi + eps`` to the box.

    Returns the effective perturbation and the perturbed policy.
    """
    xi = np.asarray(xi, dtype=float)
    std = np.sqrt(gamma ** (n - 1) * np.asarray(sigma, dtype=float))
    raw = rng.standard_normal(xi.size) * std
    xk = np.clip(xi + raw, lower, upper)
    return xk - xi, xk


def reward_weights(costs, c: float = 10.0) -> np.ndarray:
    """Softmax of the min-max normalised costs, lowest cost weighted most.

    Equal costs give uniform weights.
    """
    J = np.asarray(costs, dtype=float)
    lo, hi = J.min(), J.max()
    if hi == lo:
        return np.full(J.size, 1.0 / J.size)
    z = -c * (J - lo) / (hi - lo)
    w = np.exp(z - z.max())
    return w / w.sum()


def update(records: Sequence[RolloutRecord], xi, lower, upper, c: float,
           mu: int) -> tuple[np.ndarray, list]:
    """Weighted-average step and the elites for the next iteration.

    Elites are the ``mu`` lowest-cost non-failed records of the pool; their
    perturbations are re-expressed relative to the new policy.
    """
    if not records:
        raise ValueError("update needs at least one record")
    xi = np.asarray(xi, dtype=float)
    P = reward_weights([r.J for r in records], c)
    step = sum(p * r.eps for p, r in zip(P, records))
    xi_new = np.clip(xi + step, lower, upper)
    ok = [r for r in records if not r.failed]
    order = sorted(range(len(ok)), key=lambda i: ok[i].J)  # stable on ties
    elites = [ok[i].with_eps(ok[i].xi - xi_new) for i in order[:mu]]
    return xi_new, elites


@dataclass
class HistoryRow:
    iteration: int
    J: float
    J_e: float
    J_p: float
    violation: float
    xi: np.ndarray
    n_samples: int
    elite_costs: tuple


@dataclass
class EsResult:
    history: list
    xi_final: np.ndarray
    xi_best: np.ndarray
    best: HistoryRow
    baseline: Evaluation
    J_bar: float
    elites: list
    converged: bool

    def write_history_csv(self, path: str | Path) -> None:
        write_history_csv(path, self.history)

    def write_state_json(self, path: str | Path) -> None:
        """Final and best policy plus the elite set, enough to resume."""
        state = {
            "xi_final": self.xi_final.tolist(),
            "xi_best": self.xi_best.tolist(),
            "J_bar": self.J_bar,
            "converged": self.converged,
            "elites": [{"xi": r.xi.tolist(), "J": r.J, "J_e": r.J_e, "J_p": r.J_p}
                       for r in self.elites],
        }
        Path(path).write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")


def write_history_csv(path: str | Path, history: Sequence[HistoryRow]) -> None:
    dim = history[0].xi.size if history else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "J", "J_e", "J_p", "violation"] + [f"xi_{i}" for i in range(dim)])
        for h in history:
            w.writerow([h.iteration, repr(h.J), repr(h.J_e), repr(h.J_p), repr(h.violation)]
                       + [repr(float(v)) for v in h.xi])


def _evaluate(adapter, xi) -> Evaluation:
    try:
        ev = adapter.evaluate(xi)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        log.debug("rollout failed at xi=%s: %s", xi, exc)
        return Evaluation(J_e=np.nan, J_p=np.nan, failed=True, diagnostics={"error": str(exc)})
    if not (np.isfinite(ev.J_e) and np.isfinite(ev.J_p)):
        return Evaluation(J_e=ev.J_e, J_p=ev.J_p, failed=True, diagnostics=ev.diagnostics)
    return ev


_WORKER_ADAPTER = None


def _worker_init(adapter) -> None:
    global _WORKER_ADAPTER
    _WORKER_ADAPTER = adapter


def _worker_eval(xi) -> Evaluation:
    return _evaluate(_WORKER_ADAPTER, xi)


def run(adapter: TaskAdapter, config: EsConfig, xi0, J_bar: Optional[float] = None,
        jobs: int = 1, callback: Optional[Callable[[HistoryRow], None]] = None) -> EsResult:
    """Optimise ``xi`` from ``xi0``.

    ``J_bar`` defaults to ``(1 + sigma_tol) J_p`` of the unperturbed
    ``xi0`` episode. With ``jobs > 1`` the rollouts of an iteration run in
    worker processes; results do not depend on ``jobs``.
    """
    lower = np.asarray(adapter.lower, dtype=float)
    upper = np.asarray(adapter.upper, dtype=float)
    xi = np.clip(np.asarray(xi0, dtype=float), lower, upper)
    if len(config.sigma) != xi.size:
        raise ValueError(f"sigma has {len(config.sigma)} entries, policy has {xi.size}")
    baseline = _evaluate(adapter, xi)
    if baseline.failed:
        raise RuntimeError(f"initial policy cannot be evaluated: {baseline.diagnostics}")
    if J_bar is None:
        J_bar = (1.0 + config.sigma_tol) * baseline.J_p

    def row(n: int, ev: Evaluation, x: np.ndarray, n_samples: int, elites) -> HistoryRow:
        J = config.penalty if ev.failed else episodic_cost(ev.J_e, ev.J_p, J_bar, config.penalty)
        viol = max(0.0, ev.J_p - J_bar) if not ev.failed else np.inf
        return HistoryRow(n, J, ev.J_e, ev.J_p, viol, x.copy(), n_samples,
                          tuple(r.J for r in elites))

    history = [row(0, baseline, xi, 0, [])]
    if callback:
        callback(history[0])
    elites: list[RolloutRecord] = []
    quiet = 0
    converged = False
    pool = ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=(adapter,)) if jobs > 1 else None
    try:
        for n in range(1, config.max_iters + 1):
            draws = [perturb(xi, lower, upper, config.sigma, config.gamma, n,
                             substream(config.seed, n, k)) for k in range(config.K)]
            points = [xk for _, xk in draws]
            evals = list(pool.map(_worker_eval, points)) if pool else [_evaluate(adapter, p) for p in points]
            fresh = []
            for (eps, xk), ev in zip(draws, evals):
                J = config.penalty if ev.failed else episodic_cost(ev.J_e, ev.J_p, J_bar, config.penalty)
                fresh.append(RolloutRecord(eps=eps, xi=xk, J_e=ev.J_e, J_p=ev.J_p, J=J,
                                           failed=ev.failed, diagnostics=ev.diagnostics))
            pooled = fresh + elites
            xi_new, elites = update(pooled, xi, lower, upper, config.c, config.mu)
            delta = float(np.max(np.abs(xi_new - xi)))
            xi = xi_new
            ev = _evaluate(adapter, xi)
            history.append(row(n, ev, xi, len(pooled), elites))
            if callback:
                callback(history[-1])
            quiet = quiet + 1 if delta < config.conv_tol else 0
            if quiet >= config.patience:
                converged = True
                break
    finally:
        if pool:
            pool.shutdown()
    feasible = [h for h in history if h.violation == 0.0]
    best = min(feasible, key=lambda h: h.J) if feasible else history[0]
    return EsResult(history=history, xi_final=xi, xi_best=best.xi.copy(), best=best,
                    baseline=baseline, J_bar=float(J_bar), elites=elites, converged=converged)
