"""Experiment orchestration and report files.

Every experiment writes plain CSV tables plus a ``manifest.json`` into its
output directory. PNG figures are rendered next to the tables for a quick
look; the CSVs remain the interface.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .costs import CostSpec
from .dynamics import write_trajectory_csv
from .energy import EnergyReport
from .es import EsConfig, EsResult, HistoryRow, run as run_es
from .frontier import frontier_sweep, non_dominated, write_frontier_csv
from .ilqr import OcpSpec, SolverSettings
from .params import ConfigError, PhysicalParams, load_config
from .tasks import DmpReaching, Episode, SequentialReaching, SequentialTracking
from .tidc import TidcGains

log = logging.getLogger(__name__)

KINDS = ("frontier", "task1-ilqr-es", "task1-pi2seq", "task2-tidc-es", "validate")
REPORT_FIELDS = ("E_in", "E_elec", "E_in1", "E_in2", "E_elec1", "E_elec2", "J_p", "J_e")


@dataclass
class ExperimentSpec:
    kind: str
    config: dict
    out: Path
    seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment {self.kind!r}")
        if self.seed < 0 or self.jobs < 1:
            raise ConfigError("seed must be >= 0 and jobs >= 1")
        self.out = Path(self.out)

    @classmethod
    def from_file(cls, kind: str, path: Optional[str], out: str, seed: int = 0,
                  jobs: int = 1) -> "ExperimentSpec":
        return cls(kind=kind, config=load_config(path), out=Path(out), seed=seed, jobs=jobs)

    @property
    def params(self) -> PhysicalParams:
        return PhysicalParams.from_sections(self.config["physical"])

    def section(self, name: str, sub: str) -> dict:
        try:
            val = self.config[name][sub]
        except KeyError as exc:
            raise ConfigError(f"missing config section {name}.{sub}") from exc
        if not isinstance(val, dict):
            raise ConfigError(f"{name}.{sub} must be a mapping")
        return val

    def solver(self) -> SolverSettings:
        try:
            return SolverSettings.from_dict(self.config.get("solver", {}))
        except TypeError as exc:
            raise ConfigError(f"bad solver section: {exc}") from exc


@dataclass
class RunReport:
    kind: str
    seed: int
    baseline: EnergyReport
    final: EnergyReport
    history: list
    xi0: np.ndarray
    xi_final: np.ndarray
    labels: tuple
    J_bar: float
    baseline_hash: str
    extra: dict = field(default_factory=dict)

    @property
    def reduction(self) -> float:
        """Relative energy saving ``1 - J_e(final) / J_e(baseline)``."""
        return 1.0 - self.final.J_e / self.baseline.J_e

    @property
    def energy_reduction(self) -> float:
        """Same ratio on ``E_in`` (differs from :attr:`reduction` when ``J_e`` is not ``E_in``)."""
        return 1.0 - self.final.E_in / self.baseline.E_in


# ---------------------------------------------------------------------------
# config helpers


def expand_sigma(sigma: Any, dim: int) -> tuple:
    """Scalar, flat list, or ``[[count, value], ...]`` blocks."""
    if isinstance(sigma, (int, float)):
        out = [float(sigma)] * dim
    elif sigma and all(isinstance(s, (list, tuple)) for s in sigma):
        out = [float(v) for n, v in sigma for _ in range(int(n))]
    else:
        out = [float(s) for s in sigma]
    if len(out) != dim:
        raise ConfigError(f"exploration covariance has {len(out)} entries, policy has {dim}")
    return tuple(out)


def es_config(spec: ExperimentSpec, kind: str, dim: int) -> EsConfig:
    d = dict(spec.section("es", kind))
    d = {k: v for k, v in d.items() if not k.startswith("_")}
    try:
        d["sigma"] = expand_sigma(d.get("sigma", 0.5), dim)
        d["seed"] = spec.seed
        return EsConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad es.{kind} section: {exc}") from exc


def _number(v: Any) -> float:
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected a number, got {v!r}") from exc


def _floats(seq) -> list:
    return [_number(v) for v in seq]


def reach_adapter(spec: ExperimentSpec) -> SequentialReaching:
    t = spec.section("task", "reach")
    return SequentialReaching(
        spec.params, targets=_floats(t["targets"]), horizon=float(t["horizon"]),
        x0=_floats(t["x0"]), dt=float(t["dt"]), dt_fine=float(t["dt_fine"]),
        objective=t.get("objective", "E_in"), w_e_bounds=tuple(_floats(t["w_e_bounds"])),
        p_s_bounds=tuple(_floats(t["p_s_bounds"])) if "p_s_bounds" in t else None,
        settings=spec.solver(), damping_squared=bool(t.get("damping_squared", False)))


def dmp_adapter(spec: ExperimentSpec) -> DmpReaching:
    t = spec.section("task", "reach")
    d = spec.section("task", "dmp")
    return DmpReaching(spec.params, targets=_floats(t["targets"]), horizon=float(t["horizon"]),
                       x0=_floats(t["x0"]), dt=float(t["dt"]), dt_fine=float(t["dt_fine"]),
                       objective=d.get("objective", "composite"),
                       start_damping=_number(d.get("damping_init", 0.5)))


def tracking_adapter(spec: ExperimentSpec) -> SequentialTracking:
    t = spec.section("task", "tracking")
    metric = np.diag(_floats(t.get("metric", [1.0, 1.0])))
    gains = TidcGains.triple_pole(_number(t.get("pole", -15.0)), metric=metric,
                                  nullspace_gain=float(t.get("nullspace_gain", 1.0)),
                                  servo_lead=bool(t.get("servo_lead", True)),
                                  damping=float(t.get("damping", 0.0)))
    return SequentialTracking(spec.params, gains, targets=_floats(t["targets"]),
                              total_time=float(t["total_time"]), x0=_floats(t["x0"]),
                              dt=float(t["dt"]), objective=t.get("objective", "E_in"),
                              duration_bounds=tuple(_floats(t["duration_bounds"])),
                              min_last=float(t["min_last"]))


# ---------------------------------------------------------------------------
# output helpers


def episode_hash(ep: Episode) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ep.controls).tobytes())
    h.update(np.ascontiguousarray(ep.fine.states).tobytes())
    h.update(json.dumps(ep.report.as_dict(), sort_keys=True).encode())
    return h.hexdigest()


def write_summary_csv(path: Path, report: RunReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "baseline", "final"])
        for k in REPORT_FIELDS:
            w.writerow([k, repr(getattr(report.baseline, k)), repr(getattr(report.final, k))])
        w.writerow(["reduction_J_e", "0.0", repr(report.reduction)])
        w.writerow(["reduction_E_in", "0.0", repr(report.energy_reduction)])
        w.writerow(["J_bar", repr(report.J_bar), repr(report.J_bar)])
        for i, (lab, a, b) in enumerate(zip(report.labels, report.xi0, report.xi_final)):
            if lab in ("dmp-weight",):
                continue
            w.writerow([f"xi_{i}:{lab}", repr(float(a)), repr(float(b))])


def _cumulative_energy(ep: Episode, params: PhysicalParams) -> dict:
    from .dynamics import _powers

    p = params.packed()
    X, U = ep.fine.states, ep.fine.controls
    Uf = np.vstack([U, U[-1:]])
    pw = np.array([_powers(X[k], Uf[k], p) for k in range(X.shape[0])])
    pos = np.maximum(pw[:, 0], 0) + np.maximum(pw[:, 1], 0)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * ep.fine.dt * (pos[1:] + pos[:-1]))])
    return {"E_in_cum": cum}


def _write_manifest(spec: ExperimentSpec, path: Path, payload: dict) -> None:
    doc = {"version": __version__, "kind": spec.kind, "seed": spec.seed,
           "config": spec.config, **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# experiments


def _run_es_task(spec: ExperimentSpec, adapter, xi0: np.ndarray, J_bar: Optional[float] = None,
                 baseline_ep: Optional[Episode] = None) -> RunReport:
    cfg = es_config(spec, spec.kind, xi0.size)
    spec.out.mkdir(parents=True, exist_ok=True)
    base_ep = baseline_ep if baseline_ep is not None else adapter.episode(xi0)
    digest = episode_hash(base_ep)

    def progress(h: HistoryRow) -> None:
        log.info("iter %3d  J=%.6g  J_e=%.6g  J_p=%.6g", h.iteration, h.J, h.J_e, h.J_p)

    res: EsResult = run_es(adapter, cfg, xi0, J_bar=J_bar, jobs=spec.jobs, callback=progress)
    final_ep = adapter.episode(res.xi_best)
    check = baseline_ep if baseline_ep is not None else adapter.episode(xi0)
    if episode_hash(check) != digest:
        raise RuntimeError("baseline episode changed during the run")
    report = RunReport(kind=spec.kind, seed=spec.seed, baseline=base_ep.report,
                       final=final_ep.report, history=res.history, xi0=xi0,
                       xi_final=res.xi_best, labels=adapter.labels, J_bar=res.J_bar,
                       baseline_hash=digest,
                       extra={"converged": res.converged, "best_iteration": res.best.iteration,
                              "final_diagnostics": final_ep.diagnostics})
    res.write_history_csv(spec.out / "history.csv")
    res.write_state_json(spec.out / "es_state.json")
    write_summary_csv(spec.out / "summary.csv", report)
    write_trajectory_csv(spec.out / "baseline_trajectory.csv", base_ep.fine,
                         _cumulative_energy(base_ep, adapter.params))
    write_trajectory_csv(spec.out / "final_trajectory.csv", final_ep.fine,
                         _cumulative_energy(final_ep, adapter.params))
    _write_manifest(spec, spec.out / "manifest.json", {
        "baseline_hash": digest, "reduction": report.reduction,
        "energy_reduction": report.energy_reduction, "J_bar": report.J_bar,
        "xi0": xi0, "xi_final": res.xi_best, "labels": list(adapter.labels),
        "converged": res.converged, "iterations": len(res.history) - 1,
        "best_iteration": res.best.iteration, "final_diagnostics": final_ep.diagnostics})
    _plot_es(spec.out, report, base_ep, final_ep, adapter.params)
    return report


def run_task1_ilqr_es(spec: ExperimentSpec) -> RunReport:
    adapter = reach_adapter(spec)
    t = spec.section("task", "reach")
    xi0 = adapter.initial(_number(t["w_e_init"]), _number(t["p_s_init"]))
    return _run_es_task(spec, adapter, xi0)


def run_task1_pi2seq(spec: ExperimentSpec) -> RunReport:
    """Direct primitive optimisation, compared against the iLQR baseline."""
    reach = reach_adapter(spec)
    t = spec.section("task", "reach")
    ilqr0 = reach.episode(reach.initial(_number(t["w_e_init"]), _number(t["p_s_init"])))
    adapter = dmp_adapter(spec)
    d = spec.section("task", "dmp")
    xi0 = adapter.initial(_number(d.get("preset_init", math.pi / 24)),
                          _number(d.get("damping_init", 0.5)))
    if adapter.objective == "composite":
        J_bar = math.inf
    else:
        J_bar = (1.0 + es_config(spec, spec.kind, xi0.size).sigma_tol) * ilqr0.report.J_p
    report = _run_es_task(spec, adapter, xi0, J_bar=J_bar)
    # energy comparison is against the optimal-control baseline
    report.extra["dmp_initial"] = report.baseline
    report.baseline = ilqr0.report
    report.baseline_hash = episode_hash(ilqr0)
    write_summary_csv(spec.out / "summary.csv", report)
    with open(spec.out / "summary.csv", "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for k in REPORT_FIELDS:
            w.writerow([f"dmp_initial_{k}", repr(getattr(report.extra["dmp_initial"], k)),
                        repr(getattr(report.final, k))])
    return report


def run_task2_tidc_es(spec: ExperimentSpec) -> RunReport:
    adapter = tracking_adapter(spec)
    t = spec.section("task", "tracking")
    xi0 = np.array(_floats(t["xi0"]))
    report = _run_es_task(spec, adapter, xi0)
    report.extra["durations"] = adapter.durations(report.xi_final).tolist()
    return report


def run_frontier(spec: ExperimentSpec):
    t = spec.section("task", "frontier")
    reach = spec.section("task", "reach")
    base = OcpSpec(x0=np.array(_floats(reach["x0"])),
                   cost=CostSpec(target=_number(t["target"]),
                                 damping_squared=bool(reach.get("damping_squared", False))),
                   tf=float(t["horizon"]), dt=float(reach["dt"]))
    rows = frontier_sweep(_floats(t["w_e"]), _floats(t["p_s"]), base, spec.params,
                          spec.solver(), float(reach["dt_fine"]), jobs=spec.jobs)
    spec.out.mkdir(parents=True, exist_ok=True)
    write_frontier_csv(spec.out / "frontier.csv", rows)
    by_ps: dict = {}
    for r in rows:
        by_ps.setdefault(r.p_s, []).append(r)
    _write_manifest(spec, spec.out / "manifest.json", {
        "rows": len(rows), "failed_rows": sum(not np.isfinite(r.E_in) for r in rows),
        "non_dominated": {repr(p): non_dominated(rs) for p, rs in by_ps.items()}})
    _plot_frontier(spec.out, rows)
    return rows


def learning_curve_stats(histories: list) -> list[dict]:
    """Per-iteration mean and std of ``J``, ``J_e`` and ``J_p`` over seeds.

    Runs that stopped early on the convergence test are held at their last
    row so every iteration averages the same number of seeds.
    """
    n = max(len(h) for h in histories)
    rows = []
    for i in range(n):
        at = [h[min(i, len(h) - 1)] for h in histories]
        row = {"iter": i, "n_seeds": len(at)}
        for key in ("J", "J_e", "J_p"):
            v = np.array([getattr(r, key) for r in at], dtype=float)
            row[f"{key}_mean"] = float(v.mean())
            row[f"{key}_std"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
        rows.append(row)
    return rows


def write_learning_curve_stats(path: Path, rows: list[dict]) -> None:
    cols = ["iter", "n_seeds", "J_mean", "J_std", "J_e_mean", "J_e_std", "J_p_mean", "J_p_std"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if c in ("iter", "n_seeds") else repr(r[c]) for c in cols])


def run_batch(spec: ExperimentSpec, repeats: int) -> list[RunReport]:
    """Run an optimisation experiment for seeds ``seed .. seed + repeats - 1``.

    Each seed writes into ``<out>/seed_<s>``; the batch directory gets
    ``learning_curve_stats.csv`` and ``batch.csv`` with the per-seed outcome.
    """
    if spec.kind in ("frontier", "validate"):
        raise ConfigError(f"{spec.kind} has no random seed to repeat")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    reports = []
    for s in range(spec.seed, spec.seed + repeats):
        sub = ExperimentSpec(spec.kind, spec.config, spec.out / f"seed_{s}", s, spec.jobs)
        reports.append(run_experiment(sub))
    write_learning_curve_stats(spec.out / "learning_curve_stats.csv",
                               learning_curve_stats([r.history for r in reports]))
    with open(spec.out / "batch.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "baseline_E_in", "final_E_in", "reduction_E_in", "baseline_J_p",
                    "final_J_p", "J_bar"])
        for r in reports:
            w.writerow([r.seed, repr(r.baseline.E_in), repr(r.final.E_in),
                        repr(r.energy_reduction), repr(r.baseline.J_p), repr(r.final.J_p),
                        repr(r.J_bar)])
    return reports


def run_experiment(spec: ExperimentSpec):
    if spec.kind == "frontier":
        return run_frontier(spec)
    if spec.kind == "task1-ilqr-es":
        return run_task1_ilqr_es(spec)
    if spec.kind == "task1-pi2seq":
        return run_task1_pi2seq(spec)
    if spec.kind == "task2-tidc-es":
        return run_task2_tidc_es(spec)
    from .validate import run_validation

    return run_validation(spec)


# ---------------------------------------------------------------------------
# figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _plot_es(out: Path, report: RunReport, base: Episode, final: Episode,
             params: PhysicalParams) -> None:
    plt = _pyplot()
    it = [h.iteration for h in report.history]
    fig, ax = plt.subplots(1, 2, figsize=(10, 3.6))
    ax[0].plot(it, [h.J_e for h in report.history], label="J_e (unperturbed)")
    ax[0].axhline(report.final.J_e, color="k", lw=0.8, ls=":", label="selected")
    ax[0].set_xlabel("iteration")
    ax[0].set_ylabel("J_e")
    ax[0].legend()
    ax[1].plot(it, [h.J_p for h in report.history], color="C1")
    if np.isfinite(report.J_bar):
        ax[1].axhline(report.J_bar, color="r", lw=0.8, ls="--", label="J_p bound")
        ax[1].legend()
    ax[1].set_xlabel("iteration")
    ax[1].set_ylabel("J_p")
    fig.tight_layout()
    fig.savefig(out / "learning_curve.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    for ep, ls, name in ((base, "--", "baseline"), (final, "-", "final")):
        t = ep.fine.times
        X = ep.fine.states
        ax[0].plot(t, X[:, 0], ls, color="C0", label=f"q ({name})")
        ax[0].plot(t, X[:, 2], ls, color="C2", lw=0.8, label=f"th1 ({name})")
        ax[1].plot(t, X[:, 3], ls, color="C1", label=f"th2 ({name})")
        ax[2].plot(t, _cumulative_energy(ep, params)["E_in_cum"], ls, color="C3", label=name)
    ax[0].set_ylabel("rad")
    ax[0].legend(fontsize=7, ncol=2)
    ax[1].set_ylabel("rad")
    ax[1].legend(fontsize=7)
    ax[2].set_ylabel("cumulative E_in [J]")
    ax[2].legend(fontsize=7)
    ax[2].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out / "trajectories.png", dpi=120)
    plt.close(fig)


def _plot_frontier(out: Path, rows) -> None:
    plt = _pyplot()
    for key in ("E_in", "E_elec"):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for p in sorted({r.p_s for r in rows}):
            rs = [r for r in rows if r.p_s == p and np.isfinite(getattr(r, key))]
            ax.plot([getattr(r, key) for r in rs], [r.J_perf for r in rs], "o-", ms=3,
                    label=f"p_s={p:.1f}")
        ax.set_xlabel(f"{key} [J]")
        ax.set_ylabel("J_perf")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"frontier_{key}.png", dpi=120)
        plt.close(fig)
