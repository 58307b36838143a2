"""Characteristic flow of the kinetic model, its energy, and comparison bounds.

Every atom moves by

    dy/dt = (mean opinion - y) + sigma * (theta - y**p) * y

while its conviction and weight stay fixed.  The substitution
``y -> sigma**(1/p) * y, theta -> sigma * theta`` (time unchanged) maps the
system onto ``sigma = 1``; the closed-form bounds are written in those
variables.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError, IntegrationError, MeasureError
from .measure import EmpiricalMeasure


@dataclass(frozen=True)
class ModelParams:
    sigma: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        # sigma = 0 is tolerated here so the pure-alignment velocity can be probed;
        # anything that integrates or rescales insists on sigma > 0.
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError(f"sigma must be positive, got {self.sigma!r}")
        if not (math.isfinite(self.p) and self.p > 0):
            raise ConfigError(f"p must be positive, got {self.p!r}")

    def require_positive_sigma(self) -> None:
        if not self.sigma > 0:
            raise ConfigError("sigma must be strictly positive for this operation")


@dataclass(frozen=True)
class SimConfig:
    t_final: float
    dt: float = 1e-3
    snapshot_stride: int = 1
    integrator: Literal["rk4", "euler"] = "rk4"

    def __post_init__(self):
        if not (self.t_final > 0 and self.dt > 0):
            raise ConfigError("t_final and dt must be positive")
        if not self.dt < self.t_final:
            raise ConfigError("dt must be smaller than t_final")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be a positive integer")
        if self.integrator not in ("rk4", "euler"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.t_final / self.dt - 1e-9))

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad SimConfig fields: {exc}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    ys: np.ndarray  # (n_snapshots, n_atoms)
    initial: EmpiricalMeasure
    energies: np.ndarray
    dissipations: np.ndarray
    params: ModelParams = field(default_factory=ModelParams)

    @property
    def theta(self) -> np.ndarray:
        return self.initial.theta

    @property
    def weight(self) -> np.ndarray:
        return self.initial.weight

    def state(self, k: int) -> EmpiricalMeasure:
        return self.initial.with_opinions(self.ys[k])

    @property
    def states(self) -> list[EmpiricalMeasure]:
        return [self.state(k) for k in range(len(self.times))]

    @property
    def final(self) -> EmpiricalMeasure:
        return self.state(len(self.times) - 1)


def _rhs(y: np.ndarray, theta: np.ndarray, weight: np.ndarray, sigma: float, p: float) -> np.ndarray:
    mean = np.sum(weight * y)  # pairwise summation, fixed order
    return (mean - y) + sigma * (theta - y**p) * y


def velocity(mu: EmpiricalMeasure, y: float, theta: float, params: ModelParams) -> float:
    return float(mu.mean_opinion() - y + params.sigma * (theta - y**params.p) * y)


def velocities(mu: EmpiricalMeasure, params: ModelParams) -> np.ndarray:
    """Velocity at every atom of ``mu``."""
    return _rhs(mu.y, mu.theta, mu.weight, params.sigma, params.p)


def energy(mu: EmpiricalMeasure, params: ModelParams) -> float:
    """Free energy whose gradient flow is the characteristic system.

    ``1/4 sum_ij w_i w_j (y_i - y_j)^2 - sigma sum_i w_i V(y_i, theta_i)`` with
    ``V = theta y^2 / 2 - y^(p+2) / (p+2)``.  The pair term is evaluated through
    the equivalent weighted variance.
    """
    y, th, w, p = mu.y, mu.theta, mu.weight, params.p
    mean = np.sum(w * y)
    interaction = 0.5 * np.sum(w * (y - mean) ** 2)
    potential = np.sum(w * (0.5 * th * y**2 - y ** (p + 2) / (p + 2)))
    return float(interaction - params.sigma * potential)


def dissipation(mu: EmpiricalMeasure, params: ModelParams) -> float:
    u = velocities(mu, params)
    return float(np.sum(mu.weight * u * u))


def simulate(mu0: EmpiricalMeasure, params: ModelParams, config: SimConfig) -> Trajectory:
    params.require_positive_sigma()
    theta, weight = mu0.theta, mu0.weight
    sigma, p, dt = params.sigma, params.p, config.dt
    n_steps = config.n_steps
    stride = int(config.snapshot_stride)
    rk4 = config.integrator == "rk4"

    def f(z):
        return _rhs(z, theta, weight, sigma, p)

    y = np.array(mu0.y)
    times, snaps = [0.0], [y.copy()]
    for k in range(1, n_steps + 1):
        t_prev = (k - 1) * dt
        h = dt if k < n_steps else config.t_final - t_prev
        if rk4:
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            y = y + h * f(y)
        if not (y.min() > 0.0 and y.max() < math.inf):
            bad = int(np.flatnonzero(~(np.isfinite(y) & (y > 0)))[0])
            t = t_prev + h
            raise IntegrationError(
                f"opinion of atom {bad} left (0, inf) at t={t:.6g}", time=t, atom=bad
            )
        if k % stride == 0 or k == n_steps:
            times.append(config.t_final if k == n_steps else k * dt)
            snaps.append(y.copy())

    ys = np.array(snaps)
    ys.setflags(write=False)
    energies = np.array([energy(mu0.with_opinions(row), params) for row in ys])
    dissipations = np.array([dissipation(mu0.with_opinions(row), params) for row in ys])
    return Trajectory(np.array(times), ys, mu0, energies, dissipations, params)


def payoff(i: int, ys: Sequence[float], thetas: Sequence[float], params: ModelParams,
           mean: float | None = None) -> float:
    """Payoff of agent ``i``.  ``mean`` freezes the population average (else computed)."""
    ys = np.asarray(ys, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)
    if ys.shape != thetas.shape or ys.size == 0:
        raise MeasureError("ys and thetas must be non-empty and of equal length")
    if not 0 <= i < ys.size:
        raise IndexError(f"agent index {i} out of range for {ys.size} agents")
    ybar = float(np.mean(ys)) if mean is None else mean
    yi, p = ys[i], params.p
    return float(params.sigma * (0.5 * thetas[i] * yi**2 - yi ** (p + 2) / (p + 2)) - 0.5 * (ybar - yi) ** 2)


def nash_residual(ys: Sequence[float], thetas: Sequence[float], params: ModelParams) -> float:
    ys = np.asarray(ys, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)
    if ys.shape != thetas.shape:
        raise MeasureError("ys and thetas must have equal length")
    w = np.full(ys.size, 1.0 / ys.size)
    return float(np.max(np.abs(_rhs(ys, thetas, w, params.sigma, params.p))))


# -- rescaling and comparison bounds -----------------------------------------

def rescale_to_unit_sigma(mu: EmpiricalMeasure, params: ModelParams) -> tuple[EmpiricalMeasure, ModelParams]:
    params.require_positive_sigma()
    s = params.sigma
    if s == 1.0:
        return mu, params
    scaled = EmpiricalMeasure(mu.y * s ** (1.0 / params.p), mu.theta * s, mu.weight)
    return scaled, ModelParams(1.0, params.p)


def rescale_from_unit_sigma(mu: EmpiricalMeasure, params: ModelParams) -> EmpiricalMeasure:
    """Inverse of :func:`rescale_to_unit_sigma` for the original ``params``."""
    params.require_positive_sigma()
    s = params.sigma
    if s == 1.0:
        return mu
    return EmpiricalMeasure(mu.y / s ** (1.0 / params.p), mu.theta / s, mu.weight)


def logistic_power(t, rate: float, y0: float, p: float):
    """Solution of ``d(Y^p)/dt = p Y^p (rate - Y^p)``, ``Y(0) = y0`` (rate > 0), returned as ``Y``."""
    t = np.asarray(t, dtype=np.float64)
    y0p = y0**p
    decay = np.exp(-p * rate * t)
    out = (rate * y0p / (rate * decay + y0p * (1.0 - decay))) ** (1.0 / p)
    return float(out) if out.ndim == 0 else out


def single_agent_solution(t, y0: float, theta: float, params: ModelParams):
    """Exact opinion of a lone agent; the alignment term vanishes identically."""
    params.require_positive_sigma()
    scale = params.sigma ** (1.0 / params.p)
    return logistic_power(t, params.sigma * theta, y0 * scale, params.p) / scale


def bound_y_envelope(t: float, mu0: EmpiricalMeasure, params: ModelParams) -> tuple[float, float]:
    """Lower/upper envelope for every opinion at time ``t`` (original variables)."""
    scaled, unit = rescale_to_unit_sigma(mu0, params)
    y_min, y_max, th_min, th_max = scaled.box()
    scale = params.sigma ** (1.0 / params.p)
    lower = logistic_power(t, th_min, y_min, params.p) / scale
    upper = logistic_power(t, th_max, y_max, params.p) / scale
    return lower, upper


def bound_slice_lower(t: float, theta: float, y0: float, p: float) -> float:
    """Decoupled lower bound for a characteristic with conviction ``theta > 1`` (sigma = 1 variables)."""
    if not theta > 1:
        raise ValueError(f"slice lower bound needs theta > 1, got {theta!r}")
    return logistic_power(t, theta - 1.0, y0, p)


# -- export ------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "atom_id", "y", "theta", "weight"])
    theta, weight = traj.theta, traj.weight
    for t, row in zip(traj.times, traj.ys):
        for i, y in enumerate(row):
            writer.writerow([repr(float(t)), i, repr(float(y)), repr(float(theta[i])), repr(float(weight[i]))])
    return buf.getvalue()


def trajectory_sidecar(traj: Trajectory) -> dict:
    return {
        "times": [float(t) for t in traj.times],
        "energies": [float(e) for e in traj.energies],
        "dissipations": [float(d) for d in traj.dissipations],
        "params": asdict(traj.params),
    }


def write_trajectory(traj: Trajectory, csv_path: str | Path, json_path: str | Path) -> None:
    Path(csv_path).write_text(trajectory_to_csv(traj))
    Path(json_path).write_text(json.dumps(trajectory_sidecar(traj), indent=2))


def read_trajectory(csv_path: str | Path, json_path: str | Path) -> Trajectory:
    meta = json.loads(Path(json_path).read_text())
    reader = csv.DictReader(io.StringIO(Path(csv_path).read_text()))
    if reader.fieldnames != ["t", "atom_id", "y", "theta", "weight"]:
        raise MeasureError(f"unexpected trajectory header {reader.fieldnames}")
    rows = list(reader)
    times = np.array(meta["times"], dtype=np.float64)
    n_atoms = len(rows) // len(times)
    ys = np.array([float(r["y"]) for r in rows]).reshape(len(times), n_atoms)
    first = rows[:n_atoms]
    mu0 = EmpiricalMeasure(ys[0], [float(r["theta"]) for r in first], [float(r["weight"]) for r in first])
    ys.setflags(write=False)
    return Trajectory(
        times,
        ys,
        mu0,
        np.array(meta["energies"]),
        np.array(meta["dissipations"]),
        ModelParams(**meta.get("params", {})),
    )


# -- run diagnostics ---------------------------------------------------------

def envelope_violation(traj: Trajectory) -> float:
    """Largest relative excursion of any opinion outside the comparison envelope."""
    worst = 0.0
    for t, row in zip(traj.times, traj.ys):
        lower, upper = bound_y_envelope(t, traj.initial, traj.params)
        worst = max(worst, (lower - row.min()) / lower, (row.max() - upper) / upper)
    return float(worst)


def slice_bound_margin(traj: Trajectory) -> float | None:
    """Smallest ``Y - lower bound`` over atoms whose unit-friction conviction exceeds 1.

    ``None`` when no atom qualifies.
    """
    p = traj.params.p
    scale = traj.params.sigma ** (1.0 / p)
    theta = traj.theta * traj.params.sigma
    idx = np.flatnonzero(theta > 1.0)
    if idx.size == 0:
        return None
    y0 = traj.ys[0, idx] * scale
    margin = math.inf
    for t, row in zip(traj.times, traj.ys):
        bound = logistic_power(t, theta[idx] - 1.0, y0, p)
        margin = min(margin, float(np.min(row[idx] * scale - bound)))
    return margin


def energy_increase(traj: Trajectory) -> float:
    """Largest increase of the energy between consecutive snapshots (<= 0 means monotone)."""
    if len(traj.energies) < 2:
        return 0.0
    return float(np.max(np.diff(traj.energies)))


def energy_tolerance(traj: Trajectory, dt: float) -> float:
    return max(1.0, float(np.max(traj.dissipations))) * dt * dt


def slice_orders_preserved(traj: Trajectory) -> bool:
    """Within every conviction slice the opinion ranking never changes."""
    for t in traj.initial.thetas:
        idx = traj.initial.group_indices(t)
        order = np.argsort(traj.ys[0, idx], kind="stable")
        ranked = traj.ys[:, idx][:, order]
        if np.any(np.diff(ranked, axis=1) < 0):
            return False
    return True
