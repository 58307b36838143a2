"""Mono-opinion steady states.

In unit-friction variables the limiting opinion ``g(theta)`` of each conviction
solves

    alpha + (theta - 1) g - g**(p + 1) = 0,     alpha = sum_j m_j g(theta_j).

For fixed ``alpha > 0`` the left side is concave in ``g`` with value ``alpha``
at zero, so it has exactly one positive root.  The self-consistent ``alpha``
is then a scalar root of ``F(alpha) = sum_j m_j g(theta_j; alpha) - alpha``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SolverError
from .measure import ConvictionMarginal

BISECT_WIDTH = 1e-14
ALPHA_WIDTH = 1e-13
ALPHA_LO = 1e-12
SCAN_POINTS = 256
INVARIANT_TOL = 1e-10


def _h(g, theta, alpha, p):
    return alpha + (theta - 1.0) * g - g ** (p + 1.0)


def _solve_g(theta, alpha: float, p: float) -> np.ndarray:
    """Vectorized positive root of ``alpha + (theta-1) g - g^(p+1)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    lo = np.zeros_like(theta)
    hi = np.ones_like(theta)
    h1 = _h(hi, theta, alpha, p)
    up = h1 > 0
    # root above 1: double until the sign flips
    lo[up] = 1.0
    hi[up] = 2.0
    for _ in range(1100):
        grow = up & (_h(hi, theta, alpha, p) > 0)
        if not grow.any():
            break
        lo[grow] = hi[grow]
        hi[grow] *= 2.0
    else:
        raise SolverError("bracket expansion for g failed")
    # root below 1: halve until positive
    down = ~up
    lo[down] = 0.5
    for _ in range(1100):
        shrink = down & (lo > 0) & (_h(lo, theta, alpha, p) <= 0)
        if not shrink.any():
            break
        hi[shrink] = lo[shrink]
        lo[shrink] *= 0.5

    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        active = (hi - lo > BISECT_WIDTH) & (mid > lo) & (mid < hi)
        if not active.any():
            break
        pos = _h(mid, theta, alpha, p) > 0
        lo = np.where(active & pos, mid, lo)
        hi = np.where(active & ~pos, mid, hi)

    g = 0.5 * (lo + hi)
    for _ in range(3):
        r = _h(g, theta, alpha, p)
        slope = (theta - 1.0) - (p + 1.0) * g**p
        cand = g - r / slope
        ok = (cand >= lo) & (cand <= hi) & (np.abs(_h(cand, theta, alpha, p)) <= np.abs(r))
        g = np.where(ok, cand, g)
    return g


def solve_g_given_alpha(theta: float, alpha: float, p: float) -> float:
    return float(_solve_g(theta, alpha, p)[0])


def uniqueness_condition(theta_min: float, theta_max: float, p: float) -> bool:
    """Either ``theta_min > (p+1)/p`` or ``theta_max/theta_min < p+1`` (unit friction)."""
    return theta_min > (p + 1.0) / p or theta_max / theta_min < p + 1.0


@dataclass(frozen=True, eq=False)
class SteadyProfile:
    thetas: np.ndarray
    g: np.ndarray
    alpha: float
    p: float
    pi: ConvictionMarginal | None
    residual: float
    g_atoms: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha_candidates: tuple[float, ...] = ()
    unique_condition: bool = True
    non_unique: bool = False
    passive: bool = False

    def g_at(self, theta) -> np.ndarray:
        """Exact root at arbitrary ``theta`` for this profile's ``alpha`` (no interpolation)."""
        return _solve_g(theta, self.alpha, self.p)


def _self_consistency(pi: ConvictionMarginal, p: float):
    def F(alpha: float) -> float:
        return float(np.sum(pi.mass * _solve_g(pi.theta, alpha, p)) - alpha)
    return F


def _bisect_alpha(F, lo: float, hi: float, f_lo: float) -> float:
    while hi - lo > ALPHA_WIDTH:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        f_mid = F(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _polish_alpha(pi: ConvictionMarginal, p: float, alpha: float) -> float:
    F = _self_consistency(pi, p)
    for _ in range(3):
        f = F(alpha)
        g = _solve_g(pi.theta, alpha, p)
        dg = 1.0 / ((p + 1.0) * g**p - (pi.theta - 1.0))
        slope = float(np.sum(pi.mass * dg)) - 1.0
        if slope == 0.0:
            break
        cand = alpha - f / slope
        if not cand > 0 or abs(F(cand)) >= abs(f):
            break
        alpha = cand
    return alpha


def _grid(pi: ConvictionMarginal, grid_n: int, theta_range) -> np.ndarray:
    lo, hi = (pi.theta_min, pi.theta_max) if theta_range is None else map(float, theta_range)
    if lo > pi.theta_min or hi < pi.theta_max:
        raise ValueError("theta_range must contain every conviction atom")
    if lo == hi:
        return np.array([lo])
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    return np.linspace(lo, hi, grid_n)


def solve_profile(pi: ConvictionMarginal, p: float, grid_n: int = 1001,
                  theta_range: tuple[float, float] | None = None) -> SteadyProfile:
    F = _self_consistency(pi, p)
    f_lo = F(ALPHA_LO)
    if f_lo < 0:
        raise SolverError(f"F(alpha_lo) = {f_lo!r} < 0; bracket assumption violated")
    alpha_hi = 1.0
    while F(alpha_hi) >= 0:
        alpha_hi *= 2.0
        if alpha_hi > 2.0**60:
            raise SolverError("alpha bracket expansion exceeded 2^60")

    alpha = float(_polish_alpha(pi, p, _bisect_alpha(F, ALPHA_LO, alpha_hi, f_lo)))

    # scan for further sign changes of F over the bracket
    grid_a = np.geomspace(ALPHA_LO, alpha_hi, SCAN_POINTS)
    vals = np.array([F(a) for a in grid_a])
    candidates = []
    for k in range(SCAN_POINTS - 1):
        if vals[k] == 0.0:
            candidates.append(float(grid_a[k]))
        elif vals[k] * vals[k + 1] < 0:
            root = _bisect_alpha(F, grid_a[k], grid_a[k + 1], vals[k])
            candidates.append(float(_polish_alpha(pi, p, root)))
    unique_cond = uniqueness_condition(pi.theta_min, pi.theta_max, p)

    thetas = _grid(pi, grid_n, theta_range)
    g = _solve_g(thetas, alpha, p)
    g_atoms = _solve_g(pi.theta, alpha, p)
    residual = max(
        float(np.max(np.abs(_h(g, thetas, alpha, p)))),
        float(np.max(np.abs(_h(g_atoms, pi.theta, alpha, p)))),
        abs(alpha - float(np.sum(pi.mass * g_atoms))),
    )
    profile = SteadyProfile(
        thetas=thetas,
        g=g,
        alpha=alpha,
        p=p,
        pi=pi,
        residual=residual,
        g_atoms=g_atoms,
        alpha_candidates=tuple(candidates),
        unique_condition=unique_cond,
        non_unique=(not unique_cond) and len(candidates) > 1,
    )
    _check_invariants(profile)
    return profile


def passive_profile(alpha: float, p: float, thetas: Sequence[float]) -> SteadyProfile:
    """Curve for a prescribed ``alpha`` without self-consistency."""
    thetas = np.asarray(thetas, dtype=np.float64)
    g = _solve_g(thetas, alpha, p)
    residual = float(np.max(np.abs(_h(g, thetas, alpha, p))))
    return SteadyProfile(thetas=thetas, g=g, alpha=alpha, p=p, pi=None, residual=residual, passive=True)


def _check_invariants(profile: SteadyProfile) -> None:
    if profile.residual > INVARIANT_TOL:
        raise SolverError(f"steady-state residual {profile.residual:.3e} exceeds {INVARIANT_TOL}")
    if np.any(np.diff(profile.g) <= 0):
        raise SolverError("profile is not strictly increasing")
    if rough_bound_violation(profile) > INVARIANT_TOL:
        raise SolverError("profile violates g^p >= theta - 1")


def rough_bound_violation(profile: SteadyProfile) -> float:
    return float(np.max((profile.thetas - 1.0) - profile.g**profile.p))


def refined_lower_bound_check(profile: SteadyProfile) -> float:
    """Largest value of ``theta + pi([theta, inf)) - 1 - g(theta)^p`` over the grid."""
    if profile.pi is None:
        raise ValueError("refined bound needs the conviction marginal")
    pi = profile.pi
    tail = np.concatenate([np.cumsum(pi.mass[::-1])[::-1], [0.0]])
    tail_at = tail[np.searchsorted(pi.theta, profile.thetas, side="left")]
    return float(np.max(profile.thetas + tail_at - 1.0 - profile.g**profile.p))


def extreme_value_check(profile: SteadyProfile, tol: float = INVARIANT_TOL) -> tuple[bool, bool]:
    p = profile.p
    return (
        bool(profile.thetas[0] <= profile.g[0] ** p + tol),
        bool(profile.g[-1] ** p <= profile.thetas[-1] + tol),
    )


def _denominator(theta, g, p):
    d = 1.0 - theta + (p + 1.0) * g**p
    if np.any(d <= 0):
        raise SolverError("1 - theta + (p+1) g^p must be positive on a steady profile")
    return d


def _check_on_curve(theta, g, p, alpha):
    if alpha is not None and np.any(np.abs(_h(g, theta, alpha, p)) >= 1e-8):
        raise SolverError("g does not satisfy the steady-state equation at theta")


def g_prime(theta, g, p: float, alpha: float | None = None):
    _check_on_curve(theta, g, p, alpha)
    return g / _denominator(theta, g, p)


def g_second(theta, g, p: float, alpha: float | None = None):
    _check_on_curve(theta, g, p, alpha)
    d = _denominator(theta, g, p)
    return (2.0 * (1.0 - theta) * g + (2.0 + p - p * p) * g ** (p + 1.0)) / d**3


def _convexity_sign(theta, alpha, p):
    g = _solve_g(theta, alpha, p)
    return 2.0 * (1.0 - theta) - (p * p - p - 2.0) * g**p


def inflection_points(profile: SteadyProfile, width: float = 1e-12) -> list[float]:
    """Sign changes of g'' along the profile grid, refined by bisection in theta."""
    th, alpha, p = profile.thetas, profile.alpha, profile.p
    s = 2.0 * (1.0 - th) - (p * p - p - 2.0) * profile.g**p
    roots = [float(t) for t, v in zip(th, s) if v == 0.0]
    for k in np.flatnonzero(s[:-1] * s[1:] < 0):
        lo, hi, s_lo = th[k], th[k + 1], s[k]
        while hi - lo > width:
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            s_mid = float(_convexity_sign(mid, alpha, p)[0])
            if s_mid == 0.0:
                lo = hi = mid
                break
            if (s_mid > 0) == (s_lo > 0):
                lo, s_lo = mid, s_mid
            else:
                hi = mid
        roots.append(float(0.5 * (lo + hi)))
    return sorted(roots)


# -- figure data -------------------------------------------------------------

FIGURE_P = 6.0
FIGURE_ALPHAS = tuple(round(0.1 * k, 10) for k in range(1, 11))
FIGURE_THETAS = tuple(round(0.01 * k, 10) for k in range(1, 101))


@dataclass(frozen=True, eq=False)
class FigureTable:
    p: float
    alphas: np.ndarray
    thetas: np.ndarray
    g: np.ndarray  # (len(alphas), len(thetas))

    def rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(a), float(t), float(v))
            for a, row in zip(self.alphas, self.g)
            for t, v in zip(self.thetas, row)
        ]


def figure_curves(p: float = FIGURE_P, alphas: Sequence[float] = FIGURE_ALPHAS,
                  theta_grid: Sequence[float] = FIGURE_THETAS) -> FigureTable:
    alphas = np.asarray(alphas, dtype=np.float64)
    thetas = np.asarray(theta_grid, dtype=np.float64)
    if np.any(alphas <= 0):
        raise ValueError("alphas must be positive")
    g = np.vstack([_solve_g(thetas, a, p) for a in alphas])
    return FigureTable(p, alphas, thetas, g)


def figure_to_csv(table: FigureTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", "theta", "g"])
    for row in table.rows():
        writer.writerow([repr(v) for v in row])
    return buf.getvalue()


def figure_from_csv(text: str) -> FigureTable:
    rows = list(csv.DictReader(io.StringIO(text)))
    alphas = sorted({float(r["alpha"]) for r in rows})
    thetas = sorted({float(r["theta"]) for r in rows})
    g = np.array([float(r["g"]) for r in rows]).reshape(len(alphas), len(thetas))
    return FigureTable(float("nan"), np.array(alphas), np.array(thetas), g)


# -- export ------------------------------------------------------------------

def profile_to_csv(profile: SteadyProfile) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["theta", "g", "g_prime", "g_second"])
    gp = g_prime(profile.thetas, profile.g, profile.p)
    gs = g_second(profile.thetas, profile.g, profile.p)
    for row in zip(profile.thetas, profile.g, gp, gs):
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def profile_metadata(profile: SteadyProfile) -> dict:
    checks = {
        "rough_bound_violation": rough_bound_violation(profile),
        "extreme_values": list(extreme_value_check(profile)),
    }
    if profile.pi is not None:
        checks["refined_bound_violation"] = refined_lower_bound_check(profile)
    return {
        "alpha": profile.alpha,
        "p": profile.p,
        "residual": profile.residual,
        "inflection_points": inflection_points(profile),
        "bound_checks": checks,
        "alpha_candidates": list(profile.alpha_candidates),
        "unique_condition": profile.unique_condition,
        "non_unique": profile.non_unique,
        "pi": None if profile.pi is None else [list(a) for a in profile.pi.atoms],
    }


def write_profile(profile: SteadyProfile, csv_path: str | Path, json_path: str | Path) -> None:
    Path(csv_path).write_text(profile_to_csv(profile))
    Path(json_path).write_text(json.dumps(profile_metadata(profile), indent=2))


def read_profile_csv(text: str) -> dict[str, np.ndarray]:
    reader = csv.DictReader(io.StringIO(text))
    cols = {name: [] for name in ("theta", "g", "g_prime", "g_second")}
    if reader.fieldnames != list(cols):
        raise ValueError(f"unexpected profile header {reader.fieldnames}")
    for r in reader:
        for name in cols:
            cols[name].append(float(r[name]))
    return {k: np.array(v) for k, v in cols.items()}
