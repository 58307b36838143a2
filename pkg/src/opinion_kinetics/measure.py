"""Atomic measures on the opinion/conviction half-plane and exact W1 distances.

A state of the population is a finite cloud of weighted atoms ``(y, theta, w)``
where ``y`` is the opinion and ``theta`` the conviction.  Atoms sharing a
conviction value (exact float equality) form one slice.
"""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySliceError, MeasureError, SolverError

MASS_TOL = 1e-12
JOINT_ATOM_LIMIT = 5000


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _check_mass(weights: np.ndarray, what: str) -> None:
    if weights.size == 0:
        raise MeasureError(f"{what}: at least one atom is required")
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise MeasureError(f"{what}: weights must be finite and positive")
    total = float(np.sum(weights))
    if abs(total - 1.0) > MASS_TOL:
        raise MeasureError(f"{what}: weights sum to {total!r}, expected 1")


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted atoms ``(y_i, theta_i, w_i)`` with ``y, theta, w > 0`` and ``sum w = 1``."""

    y: np.ndarray
    theta: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        y, theta, weight = _frozen(self.y), _frozen(self.theta), _frozen(self.weight)
        if not (y.ndim == theta.ndim == weight.ndim == 1) or not (y.size == theta.size == weight.size):
            raise MeasureError("y, theta and weight must be 1-D arrays of equal length")
        _check_mass(weight, "EmpiricalMeasure")
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            raise MeasureError("opinions y must be finite and positive")
        if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
            raise MeasureError("convictions theta must be finite and positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weight", weight)

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence[float]]) -> "EmpiricalMeasure":
        arr = np.asarray(list(atoms), dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise MeasureError("atoms must be a list of [y, theta, weight] triples")
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    @classmethod
    def uniform(cls, ys: Sequence[float], thetas: Sequence[float]) -> "EmpiricalMeasure":
        ys = np.asarray(ys, dtype=np.float64)
        return cls(ys, thetas, np.full(ys.size, 1.0 / ys.size))

    def with_opinions(self, y: np.ndarray) -> "EmpiricalMeasure":
        """Same convictions and weights (shared arrays), new opinions."""
        y = _frozen(y)
        if y.shape != self.y.shape:
            raise MeasureError("opinion vector has the wrong length")
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            raise MeasureError("opinions y must be finite and positive")
        new = object.__new__(EmpiricalMeasure)
        object.__setattr__(new, "y", y)
        object.__setattr__(new, "theta", self.theta)
        object.__setattr__(new, "weight", self.weight)
        return new

    @property
    def n_atoms(self) -> int:
        return int(self.y.size)

    @property
    def atoms(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.y, self.theta, self.weight)]

    @cached_property
    def _groups(self) -> tuple[np.ndarray, list[np.ndarray]]:
        values, inverse = np.unique(self.theta, return_inverse=True)
        return values, [np.flatnonzero(inverse == k) for k in range(values.size)]

    @property
    def thetas(self) -> np.ndarray:
        """Distinct conviction values, increasing."""
        return self._groups[0]

    def group_indices(self, theta: float) -> np.ndarray:
        values, groups = self._groups
        k = int(np.searchsorted(values, theta))
        if k >= values.size or values[k] != theta:
            raise EmptySliceError(f"no atoms with theta = {theta!r}")
        return groups[k]

    def mean_opinion(self) -> float:
        return float(np.sum(self.weight * self.y))

    def box(self) -> tuple[float, float, float, float]:
        """``(y_min, y_max, theta_min, theta_max)`` of the support."""
        return (float(self.y.min()), float(self.y.max()), float(self.theta.min()), float(self.theta.max()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.theta, other.theta)
            and np.array_equal(self.weight, other.weight)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n_atoms={self.n_atoms}, convictions={self.thetas.size})"


@dataclass(frozen=True, eq=False)
class ConvictionMarginal:
    theta: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        theta, mass = _frozen(self.theta), _frozen(self.mass)
        if theta.shape != mass.shape or theta.ndim != 1:
            raise MeasureError("theta and mass must be 1-D arrays of equal length")
        _check_mass(mass, "ConvictionMarginal")
        if np.any(theta <= 0) or not np.all(np.isfinite(theta)):
            raise MeasureError("convictions must be finite and positive")
        if np.any(np.diff(theta) <= 0):
            raise MeasureError("conviction atoms must be strictly increasing")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence[float]]) -> "ConvictionMarginal":
        pairs = sorted((float(t), float(m)) for t, m in atoms)
        return cls([t for t, _ in pairs], [m for _, m in pairs])

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(t), float(m)) for t, m in zip(self.theta, self.mass)]

    @property
    def theta_min(self) -> float:
        return float(self.theta[0])

    @property
    def theta_max(self) -> float:
        return float(self.theta[-1])

    def tail_mass(self, theta: float) -> float:
        """``pi([theta, inf))``."""
        return float(np.sum(self.mass[self.theta >= theta]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConvictionMarginal):
            return NotImplemented
        return np.array_equal(self.theta, other.theta) and np.array_equal(self.mass, other.mass)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SliceMeasure:
    theta: float
    y: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        y, weight = _frozen(self.y), _frozen(self.weight)
        _check_mass(weight, "SliceMeasure")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weight", weight)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.y, self.weight)]


def conviction_marginal(mu: EmpiricalMeasure) -> ConvictionMarginal:
    values, groups = mu._groups
    return ConvictionMarginal(values, [np.sum(mu.weight[idx]) for idx in groups])


def slice_measure(mu: EmpiricalMeasure, theta: float) -> SliceMeasure:
    idx = mu.group_indices(theta)
    w = mu.weight[idx]
    return SliceMeasure(float(theta), mu.y[idx], w / np.sum(w))


def _as_1d(m) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(m, SliceMeasure):
        return m.y, m.weight
    arr = np.asarray(list(m), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise MeasureError("expected a SliceMeasure or a list of (position, weight) pairs")
    x, w = arr[:, 0], arr[:, 1]
    _check_mass(w, "1-D measure")
    return x, w


def wasserstein1_1d(a, b) -> float:
    """Exact W1 between two atomic probability measures on the line.

    Integrates ``|F_a - F_b|`` over the merged breakpoints, so unequal weights
    are handled without a coupling.
    """
    xa, wa = _as_1d(a)
    xb, wb = _as_1d(b)
    x = np.concatenate([xa, xb])
    # separate CDFs keep the result bitwise symmetric in (a, b)
    da = np.concatenate([wa, np.zeros_like(wb)])
    db = np.concatenate([np.zeros_like(wa), wb])
    order = np.argsort(x, kind="stable")
    x = x[order]
    cdf_gap = np.abs(np.cumsum(da[order]) - np.cumsum(db[order]))[:-1]
    return float(np.sum(cdf_gap * np.diff(x)))


def ground_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    """l1 ground metric ``|dy| + |dtheta|`` between all atom pairs."""
    return np.abs(mu.y[:, None] - nu.y[None, :]) + np.abs(mu.theta[:, None] - nu.theta[None, :])


def transport_cost(supply: np.ndarray, demand: np.ndarray, cost: np.ndarray,
                   max_pivots: int | None = None) -> float:
    """Optimal value of the balanced transportation problem (simplex on the basis tree).

    The initial basis is the north-west corner rule in the given row/column
    order; callers get faster convergence by pre-sorting both sides.
    """
    a = np.asarray(supply, dtype=np.float64)
    b = np.asarray(demand, dtype=np.float64)
    c = np.asarray(cost, dtype=np.float64)
    n, m = a.size, b.size
    if c.shape != (n, m):
        raise MeasureError("cost matrix shape does not match supply/demand")
    b = b * (np.sum(a) / np.sum(b))
    if n == 1 or m == 1:
        return float(np.sum(c * (b[None, :] if n == 1 else a[:, None])))

    flow: dict[tuple[int, int], float] = {}
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        flow[i, j] = q
        ra[i] -= q
        rb[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1

    # tree nodes: rows 0..n-1, columns n..n+m-1
    adj: list[set[int]] = [set() for _ in range(n + m)]
    for (i, j) in flow:
        adj[i].add(n + j)
        adj[n + j].add(i)

    tol = 1e-14 * max(1.0, float(np.max(np.abs(c))))
    limit = max_pivots if max_pivots is not None else 50 * (n + m) ** 2
    u = np.zeros(n)
    v = np.zeros(m)
    for _ in range(limit):
        # potentials: u_i + v_j = c_ij on basic cells
        seen = np.zeros(n + m, dtype=bool)
        seen[0] = True
        u[0] = 0.0
        stack = [0]
        while stack:
            k = stack.pop()
            for nb in adj[k]:
                if not seen[nb]:
                    seen[nb] = True
                    if k < n:
                        v[nb - n] = c[k, nb - n] - u[k]
                    else:
                        u[nb] = c[nb, k - n] - v[k - n]
                    stack.append(nb)
        reduced = c - u[:, None] - v[None, :]
        flat = int(np.argmin(reduced))
        if reduced.flat[flat] >= -tol:
            return float(sum(q * c[i, j] for (i, j), q in flow.items()))
        ei, ej = divmod(flat, m)

        # tree path from row ei to column ej
        parent = {ei: -1}
        queue = deque([ei])
        target = n + ej
        while queue:
            k = queue.popleft()
            if k == target:
                break
            for nb in adj[k]:
                if nb not in parent:
                    parent[nb] = k
                    queue.append(nb)
        path = [target]
        while path[-1] != ei:
            path.append(parent[path[-1]])
        path.reverse()
        cells = []
        for s in range(len(path) - 1):
            x, y = path[s], path[s + 1]
            cells.append((x, y - n) if x < n else (y, x - n))
        minus = cells[0::2]
        plus = cells[1::2]
        leave = min(minus, key=lambda cell: flow[cell])
        step = flow[leave]
        for cell in minus:
            flow[cell] -= step
        for cell in plus:
            flow[cell] += step
        del flow[leave]
        flow[ei, ej] = step
        li, lj = leave
        adj[li].discard(n + lj)
        adj[n + lj].discard(li)
        adj[ei].add(n + ej)
        adj[n + ej].add(ei)
    raise SolverError(f"transportation simplex did not converge in {limit} pivots")


def wasserstein1_joint(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W1 on the half-plane with ground metric ``|dy| + |dtheta|``."""
    if mu.n_atoms + nu.n_atoms > JOINT_ATOM_LIMIT:
        raise MeasureError(
            f"{mu.n_atoms + nu.n_atoms} atoms exceeds the exact-transport limit of "
            f"{JOINT_ATOM_LIMIT}; subsample the measures first"
        )
    ia = np.lexsort((mu.y, mu.theta))
    ib = np.lexsort((nu.y, nu.theta))
    cost = ground_cost(mu, nu)[np.ix_(ia, ib)]
    return max(0.0, transport_cost(mu.weight[ia], nu.weight[ib], cost))


def sup_slice_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """``max_theta W1(mu^theta, nu^theta)`` over the shared conviction support."""
    if not np.array_equal(mu.thetas, nu.thetas):
        raise MeasureError("measures do not share the same set of conviction values")
    return max(
        wasserstein1_1d(slice_measure(mu, t), slice_measure(nu, t)) for t in mu.thetas
    )


# -- serialization -----------------------------------------------------------

def measure_to_json(mu: EmpiricalMeasure) -> str:
    return json.dumps([list(a) for a in mu.atoms])


def measure_from_json(text: str) -> EmpiricalMeasure:
    return EmpiricalMeasure.from_atoms(json.loads(text))


def measure_to_csv(mu: EmpiricalMeasure) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["y", "theta", "weight"])
    for row in mu.atoms:
        writer.writerow([repr(v) for v in row])
    return buf.getvalue()


def measure_from_csv(text: str) -> EmpiricalMeasure:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["y", "theta", "weight"]:
        raise MeasureError(f"unexpected CSV header {reader.fieldnames}")
    return EmpiricalMeasure.from_atoms(
        (float(r["y"]), float(r["theta"]), float(r["weight"])) for r in reader
    )


def load_measure(path: str | Path) -> EmpiricalMeasure:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return measure_from_csv(text)
    return measure_from_json(text)
