"""Experiment configuration: TOML files validated into typed blocks."""

from __future__ import annotations

import hashlib
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .contagion import ConfigError, ResponseSpec, SimConfig, Threshold, UpdateMode
from .graph import DegreeDistribution, JointDegreeDistribution

__all__ = ["ExperimentConfig", "load_config", "ConfigError", "exact_node_count"]


def _as_float(v: Any) -> Any:
    # TOML has inf, but hand-written configs often quote it
    if isinstance(v, str) and v.strip().lower() in {"inf", "+inf", "infinity"}:
        return math.inf
    return v


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PowerLaw(_Block):
    """Shorthand for ``P_k`` proportional to ``k**-exponent`` on ``kmin <= k <= kmax``."""

    kmin: int = Field(ge=1)
    kmax: int
    exponent: float

    @model_validator(mode="after")
    def _range(self):
        if self.kmax < self.kmin:
            raise ValueError("power_law needs kmin <= kmax")
        return self


class NetworkBlock(_Block):
    kind: Literal["er", "config_model", "correlated", "edge_list"]
    n: int | None = Field(default=None, ge=2)
    z: float | None = Field(default=None, gt=0)
    degrees: list[int] | None = None
    weights: list[float] | None = None
    joint: list[list[float]] | None = None
    power_law: PowerLaw | None = None
    exact_proportions: bool = False
    path: str | None = None
    seed: int | None = None

    @model_validator(mode="after")
    def _check(self):
        need = {
            "er": ("n", "z"),
            "config_model": ("n", "degrees", "weights"),
            "correlated": ("n", "degrees", "joint"),
            "edge_list": ("path",),
        }[self.kind]
        if self.kind == "config_model" and self.power_law is not None:
            if self.degrees is not None or self.weights is not None:
                raise ValueError("give either power_law or degrees/weights, not both")
            need = ("n",)
        missing = [f for f in need if getattr(self, f) is None]
        if missing:
            raise ValueError(f"network kind {self.kind!r} needs {', '.join(missing)}")
        if self.degrees is not None:
            if any(k < 0 for k in self.degrees) or len(set(self.degrees)) != len(self.degrees):
                raise ValueError("degrees must be distinct non-negative integers")
            if self.weights is not None and len(self.weights) != len(self.degrees):
                raise ValueError("weights and degrees differ in length")
            if self.joint is not None and (len(self.joint) != len(self.degrees)
                                           or any(len(r) != len(self.degrees) for r in self.joint)):
                raise ValueError("joint must be a square matrix over degrees")
        return self

    @property
    def uncorrelated(self) -> bool:
        return self.kind in ("er", "config_model")

    def distribution(self) -> DegreeDistribution:
        if self.kind == "er":
            return DegreeDistribution.poisson(self.z)
        if self.kind == "config_model" and self.power_law is not None:
            pl = self.power_law
            return DegreeDistribution.from_weights({k: k ** -pl.exponent for k in range(pl.kmin, pl.kmax + 1)})
        if self.kind == "config_model":
            return DegreeDistribution.from_weights(dict(zip(self.degrees, self.weights)))
        raise ConfigError(f"network kind {self.kind!r} has no closed-form degree distribution")

    def joint_distribution(self) -> JointDegreeDistribution:
        if self.kind != "correlated":
            raise ConfigError("joint distribution needs a correlated network block")
        return JointDegreeDistribution.from_weights(self.degrees, self.joint)


class ModelBlock(_Block):
    variant: Literal["fraction", "count"] = "fraction"
    beta: float = Field(ge=0)
    r1: float
    r2: float
    sigma1: float = Field(default=0.0, ge=0)
    sigma2: float = Field(default=0.0, ge=0)

    @field_validator("r1", "r2", mode="before")
    @classmethod
    def _inf(cls, v):
        return _as_float(v)

    @model_validator(mode="after")
    def _order(self):
        if self.r2 < self.r1:
            raise ValueError(f"r2 = {self.r2} is below r1 = {self.r1}; thresholds must satisfy r1 <= r2")
        return self

    def response(self) -> ResponseSpec:
        return ResponseSpec(self.beta, Threshold(self.r1, self.sigma1), Threshold(self.r2, self.sigma2),
                            count_based=self.variant == "count")


class RunBlock(_Block):
    phi1: float = Field(ge=0, le=1)
    phi2: float = Field(default=0.0, ge=0, le=1)
    mode: Literal["async", "sync"] = "async"
    t_max: float = Field(default=50.0, gt=0)
    realizations: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    fixed_seeds: bool = False
    n_grid: int = Field(default=200, ge=2)

    @model_validator(mode="after")
    def _seeds(self):
        if self.phi2 > self.phi1:
            raise ValueError(f"phi2 = {self.phi2} exceeds phi1 = {self.phi1}")
        return self

    def sim_config(self, seed: int | None = None) -> SimConfig:
        return SimConfig(self.phi1, self.phi2, UpdateMode(self.mode), self.t_max, self.realizations,
                         self.seed if seed is None else seed, self.fixed_seeds, self.n_grid)


class Axis(_Block):
    name: Literal["z", "beta", "r1", "r2", "sigma1", "sigma2", "phi1", "phi2"]
    min: float
    max: float
    n: int = Field(ge=1)

    def values(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.n)


class AnalysisBlock(_Block):
    theory: Literal["ode", "sync"] = "ode"
    dt: float = Field(default=0.01, gt=0, le=0.05)
    overlay: bool = False
    p1: Axis | None = None
    p2: Axis | None = None
    boundary: bool = True
    continuation: bool = False

    @model_validator(mode="after")
    def _axes(self):
        if (self.p1 is None) != (self.p2 is None):
            raise ValueError("sweep needs both p1 and p2 axes")
        if self.p1 is not None and self.p1.name == self.p2.name:
            raise ValueError("sweep axes must differ")
        return self


class OutputBlock(_Block):
    dir: str | None = None
    prefix: str = "run"
    svg: bool = False


class ScenarioOverride(_Block):
    name: str
    network: dict[str, Any] = Field(default_factory=dict)
    model: dict[str, Any] = Field(default_factory=dict)
    run: dict[str, Any] = Field(default_factory=dict)


class ExperimentConfig(_Block):
    network: NetworkBlock
    model: ModelBlock
    run: RunBlock
    analysis: AnalysisBlock = AnalysisBlock()
    output: OutputBlock = OutputBlock()
    scenarios: list[ScenarioOverride] = Field(default_factory=list)

    def scenario_configs(self) -> list[tuple[str, "ExperimentConfig"]]:
        """The base experiment followed by one config per ``[[scenarios]]`` override."""
        out = [(self.output.prefix, self)]
        for sc in self.scenarios:
            raw = self.model_dump()
            raw["scenarios"] = []
            for block in ("network", "model", "run"):
                raw[block].update(getattr(sc, block))
            raw["output"]["prefix"] = f"{self.output.prefix}_{sc.name}"
            out.append((raw["output"]["prefix"], _validate(raw)))
        return out


def _validate(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines)) from None


def load_config(path: str | Path) -> tuple[ExperimentConfig, str]:
    """Parse and validate a TOML experiment file; returns the config and its sha256."""
    data = Path(path).read_bytes()
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return _validate(raw), hashlib.sha256(data).hexdigest()


def exact_node_count(dist: DegreeDistribution, n: int) -> int:
    """Node count nearest to ``n`` for which every degree class has an integral size.

    Probabilities are read as fractions with small denominators, e.g. 1/3 and
    2/3 give multiples of 3, so ``n = 10000`` becomes 9999.
    """
    den = 1
    for p in dist.probabilities.values():
        den = math.lcm(den, Fraction(p).limit_denominator(10_000).denominator)
    if den > n:
        raise ConfigError(f"cannot realize exact proportions with n = {n}")
    lo = (n // den) * den
    return lo if n - lo <= den - (n - lo) else lo + den
