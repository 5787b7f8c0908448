from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from Common import (
    DEFAULT_BURN_IN,
    DEFAULT_GRID_RES,
    DEFAULT_RENORM_EVERY,
    DEFAULT_STEP,
    DEFAULT_WARM,
    ConfigError,
    config_hash,
)
from Common.in_config import DEFAULT_SMOOTH_SLICES, LOG_LEVEL

from .models import EmpiricalMeasure, IntegratorConfig

Verdict = Literal["PASS", "FAIL", "INCONCLUSIVE"]


class EquilibriumInfo(BaseModel):
    point: List[float]
    eigenvalues_real: List[float]
    eigenvalues_imag: List[float]
    hyperbolic: bool
    lorenz_like: bool
    contracting: bool


class SystemCheckReport(BaseModel):
    system: str
    equilibrium_residual: float
    lipschitz_ratio: float
    jacobian_rel_error: float
    ok: bool


class ConeReport(BaseModel):
    base: List[float]
    a_width: float
    t: float
    n_samples: int
    max_ratio: float
    passed: bool
    note: Optional[str] = None


class DominationReport(BaseModel):
    base: List[float]
    t: float
    lambda_dom: float
    lambda_s: float
    dominated: bool
    contracting: bool


class OrbitVerdict(BaseModel):
    """Outcome of one ensemble member; excluded orbits carry ``error`` and no verdict."""

    index: int
    origin: List[float]
    value: Optional[float] = None
    liminf: Optional[float] = None
    verdict: Optional[Verdict] = None
    weak_verdict: Optional[Verdict] = None
    running: List[float] = Field(default_factory=list)
    error: Optional[Dict[str, Any]] = None


class SrGridCell(BaseModel):
    delta: float
    eps: float
    pass_fraction: float


class CriterionReport(BaseModel):
    criterion: str
    system: str
    seed: int
    thresholds: Dict[str, float]
    per_orbit: List[OrbitVerdict]
    pass_fraction: float
    weak_pass_fraction: float
    excluded_count: int
    sr_grid: List[SrGridCell] = Field(default_factory=list)
    note: Optional[str] = None

    @property
    def valid_count(self) -> int:
        return len(self.per_orbit) - self.excluded_count


class BirkhoffResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    value: float
    times: np.ndarray
    curve: np.ndarray


class PushforwardResult(BaseModel):
    measure: EmpiricalMeasure
    retained_fraction: float
    retained_pairs: int
    particle_count: int
    excluded_count: int = 0


class ClusterResult(BaseModel):
    clusters: List[List[int]]
    representatives: List[EmpiricalMeasure]
    radius: float
    panels: List[List[float]] = Field(default_factory=list)


class BasinCoverage(BaseModel):
    fractions: List[float]
    remainder: float
    assignments: List[int]
    excluded_count: int
    tol: float


class RunConfig(BaseModel):
    """
    Single textual configuration of a run.

    Loaded from one YAML file, then patched by ``--set key=value`` overrides.
    Unknown keys are rejected. ``threads``, ``out_dir`` and ``log_level`` do not
    change results and are left out of the config hash.
    """

    model_config = ConfigDict(extra="forbid")

    system: str = "lorenz"
    command: Optional[str] = None
    x0: Optional[List[float]] = None

    step: float = DEFAULT_STEP
    renorm_every: int = DEFAULT_RENORM_EVERY

    t: float = 10.0
    sample_every: int = 1
    warm: float = DEFAULT_WARM
    burn_in: float = DEFAULT_BURN_IN
    n: int = 2000
    period: float = 1.0
    horizon: float = 500.0

    c0: float = 0.1
    c_star: float = 0.0
    theta: float = 0.0
    plane_samples: int = 8
    delta: float = 0.01
    eps: float = 0.05
    delta_list: List[float] = Field(default_factory=lambda: [0.01, 0.05, 0.1])
    eps_list: List[float] = Field(default_factory=lambda: [0.01, 0.05, 0.1])
    identity_tol: float = 1e-3
    pass_fraction: float = 0.9

    delta0: float = 0.01
    eps0: float = 0.001
    kappa_min: int = 1

    a_width: float = 1.0
    cone_samples: int = 100

    count: int = 20
    seed: Optional[int] = None
    grid_res: int = DEFAULT_GRID_RES
    slices: int = DEFAULT_SMOOTH_SLICES
    radius: float = 0.3
    tol: float = 0.05
    basin_count: int = 100
    disk_particles: int = 0
    disk_radius: float = 0.1
    n_max: int = 500

    threads: Optional[int] = None
    out_dir: str = "out"
    log_level: str = LOG_LEVEL

    @classmethod
    def from_yaml(cls, path: Path) -> "RunConfig":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", path=str(path)) from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping", path=str(path))
        return cls.validated(data)

    @classmethod
    def validated(cls, data: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(f"invalid configuration: {exc.errors(include_url=False)}") from exc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(), sort_keys=True)

    def with_overrides(self, overrides: List[str]) -> "RunConfig":
        """Apply ``key=value`` strings; values are parsed as YAML scalars or lists."""
        data = self.model_dump()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"override {item!r} is not of the form key=value")
            data[key.strip()] = yaml.safe_load(raw)
        return self.validated(data)

    def integrator(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(step=self.step, renorm_every=self.renorm_every)
        except ValidationError as exc:
            raise ConfigError(f"invalid integrator settings: {exc.errors(include_url=False)}") from exc

    def digest(self) -> str:
        return config_hash(self.model_dump(exclude={"threads", "out_dir", "log_level"}))
