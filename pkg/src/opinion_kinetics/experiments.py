"""Reproducible numerical studies of the model's asymptotic and stability properties.

All studies work in unit-friction variables (inputs are rescaled first), so the
steady profile and the simulated slices live in the same coordinates.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    ModelParams,
    SimConfig,
    Trajectory,
    envelope_violation,
    energy_increase,
    energy_tolerance,
    rescale_to_unit_sigma,
    simulate,
    slice_bound_margin,
)
from .errors import MeasureError, NumericalError
from .measure import (
    ConvictionMarginal,
    EmpiricalMeasure,
    conviction_marginal,
    slice_measure,
    sup_slice_distance,
    wasserstein1_1d,
    wasserstein1_joint,
)
from .steady import solve_profile, uniqueness_condition

R2_THRESHOLD = 0.99
FINAL_DISTANCE = 1e-6
CONCENTRATED = 1e-10
# below this a slice distance is dominated by rounding, not by the dynamics
DISTANCE_FLOOR = 1e-11


def worker_count() -> int:
    env = os.environ.get("OPINION_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _parallel_map(fn: Callable, items: Sequence) -> list:
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class RateFit:
    window_start: float
    slope: float
    intercept: float
    r_squared: float
    n_points: int


@dataclass
class StudyReport:
    name: str
    inputs: dict
    series: list[tuple[float, float]]
    fit: RateFit | None = None
    passed: bool = False
    advisory: bool = False
    notes: str = ""
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.series:
            raise ValueError("a study report needs a non-empty series")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "inputs": self.inputs,
            "series": [[float(x), float(v)] for x, v in self.series],
            "fit": None if self.fit is None else asdict(self.fit),
            "pass": self.passed,
            "advisory": self.advisory,
            "notes": self.notes,
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def series_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "value"])
        for x, v in self.series:
            writer.writerow([repr(float(x)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, data: dict) -> "StudyReport":
        fit = data.get("fit")
        return cls(
            name=data["name"],
            inputs=data["inputs"],
            series=[(float(x), float(v)) for x, v in data["series"]],
            fit=None if fit is None else RateFit(**fit),
            passed=data["pass"],
            advisory=data.get("advisory", False),
            notes=data.get("notes", ""),
            metrics=data.get("metrics", {}),
        )


def read_series_csv(text: str) -> list[tuple[float, float]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["x", "value"]:
        raise ValueError(f"unexpected series header {reader.fieldnames}")
    return [(float(r["x"]), float(r["value"])) for r in reader]


def fit_exponential_rate(series: Sequence[tuple[float, float]], tail_fraction: float = 0.5) -> RateFit:
    """Least-squares line through ``(t, log value)`` over the trailing ``tail_fraction`` of points."""
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    n_tail = math.ceil(len(series) * tail_fraction)
    window = list(series)[len(series) - n_tail:]
    if len(window) < 3:
        raise ValueError(f"need at least 3 points in the fit window, got {len(window)}")
    t = np.array([x for x, _ in window], dtype=np.float64)
    v = np.array([y for _, y in window], dtype=np.float64)
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise NumericalError("non-positive values in the fit window; shorten the horizon")
    logv = np.log(v)
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    if ss_tot == 0.0:
        return RateFit(float(t[0]), 0.0, float(logv[0]), 1.0, len(window))
    slope, intercept = np.polyfit(t, logv, 1)
    ss_res = float(np.sum((logv - (slope * t + intercept)) ** 2))
    r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(float(t[0]), float(slope), float(intercept), r2, len(window))


def above_floor(series: Sequence[tuple[float, float]], floor: float = DISTANCE_FLOOR) -> list[tuple[float, float]]:
    """Leading part of ``series`` before the first value at or below ``floor``."""
    out = []
    for x, v in series:
        if not v > floor:
            break
        out.append((x, v))
    return out


def run_diagnostics(traj: Trajectory, dt: float) -> dict:
    """Bound and energy checks applied to every simulated run."""
    margin = slice_bound_margin(traj)
    return {
        "envelope_violation": envelope_violation(traj),
        "slice_bound_margin": margin,
        "energy_increase": energy_increase(traj),
        "energy_tolerance": energy_tolerance(traj, dt),
    }


def diagnostics_ok(diag: dict) -> bool:
    margin = diag["slice_bound_margin"]
    return (
        diag["envelope_violation"] <= 1e-6
        and (margin is None or margin >= -1e-9)
        and diag["energy_increase"] <= diag["energy_tolerance"]
    )


def _config_dict(params: ModelParams, config: SimConfig | None = None, **extra) -> dict:
    out = {"params": asdict(params)}
    if config is not None:
        out["sim"] = asdict(config)
    out.update(extra)
    return out


def _rate_verdict(series, tail_fraction: float, floor: float):
    """Fit over the resolvable part of ``series``; returns (fit, note)."""
    usable = above_floor(series, floor)
    note = ""
    if len(usable) < len(series):
        note = f"fit restricted to t <= {usable[-1][0]:g} (values below {floor:g} afterwards)" if usable else ""
    fit = fit_exponential_rate(usable, tail_fraction) if len(usable) >= 3 else None
    return fit, note


def mono_opinion_study(mu0: EmpiricalMeasure, params: ModelParams, config: SimConfig,
                       tail_fraction: float = 0.5, floor: float = DISTANCE_FLOOR) -> StudyReport:
    scaled, unit = rescale_to_unit_sigma(mu0, params)
    traj = simulate(scaled, unit, config)
    pi = conviction_marginal(scaled)
    profile = solve_profile(pi, unit.p)
    targets = dict(zip(pi.theta, profile.g_atoms))

    def distance(k: int) -> float:
        state = traj.state(k)
        return max(
            wasserstein1_1d(slice_measure(state, t), [(g, 1.0)]) for t, g in targets.items()
        )

    series = [(float(t), distance(k)) for k, t in enumerate(traj.times)]
    final = traj.final
    position_error = max(
        float(np.max(np.abs(final.y[final.group_indices(t)] - g))) for t, g in targets.items()
    )
    diag = run_diagnostics(traj, config.dt)
    metrics = {
        "alpha": profile.alpha,
        "g_at_convictions": {repr(float(t)): float(g) for t, g in targets.items()},
        "final_position_error": position_error,
        "final_distance": series[-1][1],
        "unique_condition": profile.unique_condition,
        **diag,
    }
    inputs = _config_dict(params, config, n_atoms=mu0.n_atoms, convictions=[float(t) for t in mu0.thetas])
    if max(v for _, v in series) < CONCENTRATED:
        return StudyReport("mono_opinion", inputs, series, None, True,
                           notes="initial state already concentrated at the profile", metrics=metrics)
    fit, note = _rate_verdict(series, tail_fraction, floor)
    passed = (
        fit is not None
        and fit.slope < 0
        and fit.r_squared > R2_THRESHOLD
        and series[-1][1] < FINAL_DISTANCE
        and diagnostics_ok(diag)
    )
    return StudyReport("mono_opinion", inputs, series, fit, passed, notes=note, metrics=metrics)


def uniqueness_study(mu0_a: EmpiricalMeasure, mu0_b: EmpiricalMeasure, params: ModelParams,
                     config: SimConfig, tail_fraction: float = 0.5,
                     floor: float = DISTANCE_FLOOR) -> StudyReport:
    if conviction_marginal(mu0_a) != conviction_marginal(mu0_b):
        raise MeasureError("uniqueness study needs two measures with the same conviction marginal")
    (a, unit), (b, _) = rescale_to_unit_sigma(mu0_a, params), rescale_to_unit_sigma(mu0_b, params)
    traj_a, traj_b = _parallel_map(lambda m: simulate(m, unit, config), [a, b])
    series = [
        (float(t), sup_slice_distance(traj_a.state(k), traj_b.state(k)))
        for k, t in enumerate(traj_a.times)
    ]
    pi = conviction_marginal(a)
    advisory = not uniqueness_condition(pi.theta_min, pi.theta_max, unit.p)
    profile = solve_profile(pi, unit.p)
    limit_error = 0.0
    for traj in (traj_a, traj_b):
        final = traj.final
        for t, g in zip(pi.theta, profile.g_atoms):
            idx = final.group_indices(t)
            slice_mean = float(np.sum(final.weight[idx] * final.y[idx]) / np.sum(final.weight[idx]))
            limit_error = max(limit_error, abs(slice_mean - g))
    diag_a = run_diagnostics(traj_a, config.dt)
    diag_b = run_diagnostics(traj_b, config.dt)
    metrics = {
        "final_distance": series[-1][1],
        "limit_error": limit_error,
        "unique_condition": not advisory,
        "diagnostics": [diag_a, diag_b],
    }
    inputs = _config_dict(params, config, convictions=[float(t) for t in pi.theta])
    notes = "uniqueness condition fails: decay not asserted" if advisory else ""
    if max(v for _, v in series) == 0.0:
        return StudyReport("uniqueness", inputs, series, None, True, advisory,
                           "identical initial data", metrics)
    fit, note = _rate_verdict(series, tail_fraction, floor)
    passed = (
        fit is not None
        and fit.slope < 0
        and fit.r_squared > R2_THRESHOLD
        and series[-1][1] < FINAL_DISTANCE
        and diagnostics_ok(diag_a)
        and diagnostics_ok(diag_b)
    )
    notes = "; ".join(x for x in (notes, note) if x)
    return StudyReport("uniqueness", inputs, series, fit, passed, advisory, notes, metrics)


def canonical_order(mu: EmpiricalMeasure) -> EmpiricalMeasure:
    """Same measure with atoms sorted by (theta, y)."""
    order = np.lexsort((mu.y, mu.theta))
    return EmpiricalMeasure(mu.y[order], mu.theta[order], mu.weight[order])


def stratified_subsample(mu: EmpiricalMeasure, n: int) -> EmpiricalMeasure:
    """Deterministic n-atom approximation with the same conviction marginal (up to rounding).

    Each conviction group of mass ``m`` gets ``max(1, round(n m))`` equally
    weighted atoms placed at the mid-quantiles of its slice.
    """
    ys, ths, ws = [], [], []
    for t in mu.thetas:
        idx = mu.group_indices(t)
        order = idx[np.argsort(mu.y[idx], kind="stable")]
        y, w = mu.y[order], mu.weight[order]
        mass = float(np.sum(w))
        k = max(1, int(round(n * mass)))
        if k == y.size and np.all(w == w[0]):
            ys.append(y)
            ws.append(w)
        else:
            cdf = np.cumsum(w) / mass
            levels = (np.arange(k) + 0.5) / k
            ys.append(y[np.minimum(np.searchsorted(cdf, levels, side="left"), y.size - 1)])
            ws.append(np.full(k, mass / k))
        ths.append(np.full(ys[-1].size, t))
    return EmpiricalMeasure(np.concatenate(ys), np.concatenate(ths), np.concatenate(ws))


def mean_field_study(mu_limit: EmpiricalMeasure, Ns: Sequence[int], params: ModelParams,
                     config: SimConfig) -> StudyReport:
    if list(Ns) != sorted(Ns):
        raise ValueError("Ns must be increasing")
    reference = canonical_order(mu_limit)
    coarse = [stratified_subsample(reference, n) for n in Ns]
    runs = _parallel_map(lambda m: simulate(m, params, config), [reference, *coarse])
    ref_final = runs[0].final
    d0 = [wasserstein1_joint(m, reference) for m in coarse]
    dT = [wasserstein1_joint(r.final, ref_final) for r in runs[1:]]
    ratios = [b / a for a, b in zip(d0, dT) if a > 0]
    diags = [run_diagnostics(r, config.dt) for r in runs]
    spread = max(ratios) / min(ratios) if ratios and min(ratios) > 0 else (1.0 if not ratios else math.inf)
    passed = spread < 10.0 and all(math.isfinite(r) for r in ratios) and all(map(diagnostics_ok, diags))
    metrics = {
        "atoms": [m.n_atoms for m in coarse],
        "distance_t0": d0,
        "distance_tfinal": dT,
        "ratios": ratios,
        "ratio_spread": spread,
        "diagnostics": diags,
    }
    series = [(float(n), float(d)) for n, d in zip(Ns, dT)]
    inputs = _config_dict(params, config, Ns=list(Ns), reference_atoms=mu_limit.n_atoms)
    return StudyReport("mean_field", inputs, series, None, passed, metrics=metrics)


def shift_marginal(pi: ConvictionMarginal, eps: float) -> ConvictionMarginal:
    return ConvictionMarginal(pi.theta + eps, pi.mass)


def marginal_stability_study(pi: ConvictionMarginal, perturbation_eps: float, p: float,
                             grid_n: int = 1001, levels: int = 4) -> StudyReport:
    advisory = not uniqueness_condition(pi.theta_min, pi.theta_max, p)
    inputs = {"pi": [list(a) for a in pi.atoms], "eps": perturbation_eps, "p": p}
    if perturbation_eps == 0:
        return StudyReport("marginal_stability", inputs, [(0.0, 0.0)], None, True, advisory,
                           "zero perturbation")
    base = solve_profile(pi, p, grid_n)
    series, ratios, w1s = [], [], []
    for k in range(levels):
        eps = perturbation_eps / 2**k
        shifted = shift_marginal(pi, eps)
        other = solve_profile(shifted, p, grid_n)
        diff = float(np.max(np.abs(base.g - other.g_at(base.thetas))))
        w1 = wasserstein1_1d(pi.atoms, shifted.atoms)
        series.append((eps, diff))
        w1s.append(w1)
        ratios.append(diff / w1)
    spread = max(ratios) / min(ratios)
    metrics = {"ratios": ratios, "w1": w1s, "ratio_spread": spread, "unique_condition": not advisory}
    notes = "uniqueness condition fails: Lipschitz bound not asserted" if advisory else ""
    return StudyReport("marginal_stability", inputs, series, None, spread < 2.0, advisory, notes, metrics)


def dissipation_residual(traj: Trajectory) -> float:
    """``max_k |(E_{k+1} - E_k)/(t_{k+1} - t_k) + D_k|`` over consecutive snapshots."""
    dE = np.diff(traj.energies) / np.diff(traj.times)
    return float(np.max(np.abs(dE + traj.dissipations[:-1])))


def energy_descent_study(mu0: EmpiricalMeasure, params: ModelParams, config: SimConfig) -> StudyReport:
    fine = SimConfig(config.t_final, config.dt / 2, config.snapshot_stride, config.integrator)
    coarse_run, fine_run = _parallel_map(lambda c: simulate(mu0, params, c), [config, fine])
    r_coarse, r_fine = dissipation_residual(coarse_run), dissipation_residual(fine_run)
    inc = [energy_increase(coarse_run), energy_increase(fine_run)]
    tol = [energy_tolerance(coarse_run, config.dt), energy_tolerance(fine_run, fine.dt)]
    monotone = inc[0] <= tol[0] and inc[1] <= tol[1]
    spread = float(np.ptp(coarse_run.energies))
    at_rest = r_coarse < 1e-12
    if at_rest:
        ratio = None
        passed = monotone and spread < 1e-12
        notes = "initial state at rest"
    else:
        ratio = r_coarse / r_fine
        passed = monotone and ratio >= 1.9
        notes = ""
    metrics = {
        "energy_increase": inc,
        "energy_tolerance": tol,
        "energy_spread": spread,
        "dissipation_residual": [r_coarse, r_fine],
        "refinement_ratio": ratio,
        "diagnostics": run_diagnostics(coarse_run, config.dt),
    }
    series = [(float(t), float(e)) for t, e in zip(coarse_run.times, coarse_run.energies)]
    inputs = _config_dict(params, config, n_atoms=mu0.n_atoms)
    return StudyReport("energy_descent", inputs, series, None, passed, notes=notes, metrics=metrics)
