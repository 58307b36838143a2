"""JSON run configuration (validated with pydantic)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

from .dynamics import ModelParams, SimConfig
from .errors import ConfigError
from .measure import ConvictionMarginal, EmpiricalMeasure, load_measure

COMMANDS = ("simulate", "steady", "meanfield", "rates", "uniqueness", "stability", "figure", "verify")
Command = Literal["simulate", "steady", "meanfield", "rates", "uniqueness", "stability", "figure", "verify"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamsModel(_Strict):
    sigma: PositiveFloat = 1.0
    p: PositiveFloat = 1.0

    def build(self) -> ModelParams:
        return ModelParams(self.sigma, self.p)


class SimModel(_Strict):
    t_final: PositiveFloat
    dt: PositiveFloat = 1e-3
    snapshot_stride: PositiveInt = 1
    integrator: Literal["rk4", "euler"] = "rk4"

    def build(self) -> SimConfig:
        return SimConfig(self.t_final, self.dt, self.snapshot_stride, self.integrator)


class GeneratorModel(_Strict):
    """Atoms per conviction, opinions drawn uniformly (``random``) or on mid-point quantiles (``grid``)."""

    kind: Literal["random", "grid"]
    convictions: list[PositiveFloat] = Field(min_length=1)
    counts: list[PositiveInt] = Field(min_length=1)
    y_range: tuple[PositiveFloat, PositiveFloat]
    seed: int | None = None

    def build(self, default_seed: int) -> EmpiricalMeasure:
        if len(self.counts) != len(self.convictions):
            raise ConfigError("initial_measure: counts and convictions differ in length")
        lo, hi = self.y_range
        if not lo < hi:
            raise ConfigError("initial_measure: y_range must be increasing")
        rng = np.random.default_rng(default_seed if self.seed is None else self.seed)
        ys, ths = [], []
        for theta, n in zip(self.convictions, self.counts):
            if self.kind == "random":
                ys.append(rng.uniform(lo, hi, n))
            else:
                ys.append(lo + (hi - lo) * (np.arange(n) + 0.5) / n)
            ths.append(np.full(n, theta))
        return EmpiricalMeasure.uniform(np.concatenate(ys), np.concatenate(ths))


MeasureSpec = Union[list[tuple[float, float, float]], str, GeneratorModel]


class FigureModel(_Strict):
    p: PositiveFloat = 6.0
    alphas: list[PositiveFloat] = Field(default_factory=lambda: [round(0.1 * k, 10) for k in range(1, 11)])
    theta_grid: list[PositiveFloat] = Field(default_factory=lambda: [round(0.01 * k, 10) for k in range(1, 101)])


class RunConfig(_Strict):
    command: Command | None = None
    params: ParamsModel = Field(default_factory=ParamsModel)
    sim: SimModel | None = None
    initial_measure: MeasureSpec | None = None
    initial_measure_b: MeasureSpec | None = None
    output_dir: str = "out"
    seed: int = 0
    pi: list[tuple[PositiveFloat, PositiveFloat]] | None = None
    grid_n: int = Field(1001, ge=2)
    theta_range: tuple[PositiveFloat, PositiveFloat] | None = None
    eps: float = Field(1e-3, ge=0)
    Ns: list[PositiveInt] | None = None
    tail_fraction: float = Field(0.5, gt=0, le=1)
    figure: FigureModel = Field(default_factory=FigureModel)
    configs: list[str] | None = None
    energy_config: str | None = None

    # filled by load_config, used to resolve relative paths
    base_dir: str = Field(".", exclude=True)

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"command {self.command!r} requires field(s): {', '.join(missing)}")

    def measure(self, which: str = "initial_measure") -> EmpiricalMeasure:
        spec = getattr(self, which)
        if spec is None:
            raise ConfigError(f"command {self.command!r} requires field: {which}")
        if isinstance(spec, GeneratorModel):
            return spec.build(self.seed)
        if isinstance(spec, str):
            return load_measure(self.resolve(spec))
        return EmpiricalMeasure.from_atoms(spec)

    def marginal(self) -> ConvictionMarginal:
        if self.pi is not None:
            return ConvictionMarginal.from_atoms(self.pi)
        from .measure import conviction_marginal
        return conviction_marginal(self.measure())

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"field {loc}: {err['msg']}")
    return "; ".join(lines)


def load_config(path: str | Path, command: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {_format_validation(exc)}") from None
    if command is not None:
        if cfg.command is not None and cfg.command != command:
            raise ConfigError(f"{path}: config is for {cfg.command!r}, not {command!r}")
        cfg.command = command
    cfg.base_dir = str(path.parent)
    return cfg
