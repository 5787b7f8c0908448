from typing import Any, Callable, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from Common import (
    DEFAULT_BURN_IN,
    DEFAULT_METHOD,
    DEFAULT_RENORM_EVERY,
    DEFAULT_STEP,
    MAX_STEP,
)


def _as_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=float)


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class SystemSpec(ArrayModel):
    """
    A vector field G on R^m together with everything the lab needs to work inside its trapping region.

    Attributes:
        name (str): Registry name with parameters, e.g. ``saddle(1,1,2)``.
        dim (int): Ambient dimension m.
        vector_field (Callable): x -> G(x); accepts points of shape (m,) or (k, m).
        jacobian (Callable): x -> DG(x) of shape (m, m).
        equilibria (np.ndarray): Listed equilibria, shape (k, m); k may be 0.
        box_lo, box_hi (np.ndarray): Bounding box; leaving it is an escape error.
        trap_lo, trap_hi (np.ndarray): Bounding box of the trapping region, used for sampling.
        trap_predicate (Callable): x -> bool, membership of the trapping region U.
        lip_bound (float): L = sup_U ||DG||.
        d_s, d_cu (int): Declared dimensions of the stable and center-unstable bundles.
        ecu_frame (np.ndarray): Optional (m, d_cu) frame spanning an invariant E^cu, for
            fields whose tangent dynamics do not single one out.
        source (Any): Registry string or custom definition used to rebuild the system in workers.
    """

    name: str
    dim: int = Field(..., gt=0)
    vector_field: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    equilibria: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    trap_lo: np.ndarray
    trap_hi: np.ndarray
    trap_predicate: Callable[[np.ndarray], Any]
    lip_bound: float = Field(..., gt=0)
    d_s: int = Field(..., ge=0)
    d_cu: int = Field(..., ge=1)
    ecu_frame: Optional[np.ndarray] = None
    params: Dict[str, float] = Field(default_factory=dict)
    source: Any = None

    @field_validator("box_lo", "box_hi", "trap_lo", "trap_hi", mode="before")
    @classmethod
    def _vector(cls, value):
        return _as_array(value).reshape(-1)

    @field_validator("equilibria", mode="before")
    @classmethod
    def _points(cls, value):
        arr = _as_array(value)
        return arr.reshape(-1, arr.shape[-1]) if arr.size else arr.reshape(0, 0)

    @field_validator("ecu_frame", mode="before")
    @classmethod
    def _frame(cls, value):
        return None if value is None else _as_array(value)

    @model_validator(mode="after")
    def _dimensions(self):
        m = self.dim
        for label in ("box_lo", "box_hi", "trap_lo", "trap_hi"):
            if getattr(self, label).shape != (m,):
                raise ValueError(f"{label} must have {m} entries")
        if self.equilibria.size and self.equilibria.shape[1] != m:
            raise ValueError("equilibria must be points of R^m")
        if np.any(self.box_hi <= self.box_lo):
            raise ValueError("empty bounding box")
        if self.d_s + self.d_cu != m:
            raise ValueError("d_s + d_cu must equal the dimension")
        if self.ecu_frame is not None:
            if self.ecu_frame.shape != (m, self.d_cu):
                raise ValueError(f"ecu_frame must have shape ({m}, {self.d_cu})")
            if np.linalg.matrix_rank(self.ecu_frame) < self.d_cu:
                raise ValueError("ecu_frame must have full rank")
        return self

    @property
    def sing(self) -> np.ndarray:
        if self.equilibria.size == 0:
            return np.zeros((0, self.dim))
        return self.equilibria

    def eval(self, x) -> np.ndarray:
        return np.asarray(self.vector_field(np.asarray(x, dtype=float)), dtype=float)

    def jac(self, x) -> np.ndarray:
        return np.asarray(self.jacobian(np.asarray(x, dtype=float)), dtype=float)

    def in_box(self, x) -> Union[bool, np.ndarray]:
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.box_lo) & (x <= self.box_hi), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def in_trap(self, x) -> Union[bool, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return bool(self.trap_predicate(x))
        return np.array([bool(self.trap_predicate(p)) for p in x])


class TangentFrame(ArrayModel):
    """Columns of ``frame`` are tangent vectors at ``base``."""

    base: np.ndarray
    frame: np.ndarray

    @field_validator("base", mode="before")
    @classmethod
    def _base(cls, value):
        return _as_array(value).reshape(-1)

    @field_validator("frame", mode="before")
    @classmethod
    def _frame(cls, value):
        arr = _as_array(value)
        return arr.reshape(-1, 1) if arr.ndim == 1 else arr

    @model_validator(mode="after")
    def _independent(self):
        m, k = self.frame.shape
        if m != self.base.shape[0] or k > m or k == 0:
            raise ValueError("frame must be m x k with 1 <= k <= m")
        norms = np.linalg.norm(self.frame, axis=0)
        if np.any(norms == 0):
            raise ValueError("frame has a zero column")
        if np.linalg.svd(self.frame / norms, compute_uv=False)[-1] <= 1e-12:
            raise ValueError("frame columns are not linearly independent")
        return self

    @property
    def k(self) -> int:
        return self.frame.shape[1]


class IntegratorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: float = DEFAULT_STEP
    renorm_every: int = DEFAULT_RENORM_EVERY
    method: Literal["rk4"] = DEFAULT_METHOD

    @field_validator("step")
    @classmethod
    def _step(cls, value):
        if not 0 < value <= MAX_STEP:
            raise ValueError(f"step must lie in (0, {MAX_STEP}]")
        return value

    @field_validator("renorm_every")
    @classmethod
    def _renorm(cls, value):
        if value < 1:
            raise ValueError("renorm_every must be >= 1")
        return value


class SplittingEstimate(ArrayModel):
    """
    Numerical splitting E^s + E^cu at ``base``.

    ``angle_gap`` is the smallest principal angle between the two subspaces and
    ``residual`` the distance of G(base)/|G(base)| from span(ecu_basis).
    """

    base: np.ndarray
    es_basis: np.ndarray
    ecu_basis: np.ndarray
    angle_gap: float
    residual: float

    @property
    def d_s(self) -> int:
        return self.es_basis.shape[1]

    @property
    def d_cu(self) -> int:
        return self.ecu_basis.shape[1]


class NormalSection(ArrayModel):
    base: np.ndarray
    ncu_basis: np.ndarray


class CocycleTrace(ArrayModel):
    """
    Per-sample logs along f^i(base), f = time-``period`` map, i = 0..n-1.

    Attributes:
        a (np.ndarray): log ||(P^T | N^cu)^-1||.
        logP (np.ndarray): log ||P^T | N^cu||.
        logG (np.ndarray): log ||G(f^i x)||; ``logG_final`` is the value at f^n x.
        logdet_cu (np.ndarray): log |det(D phi_T | E^cu)|.
        dist_trunc (np.ndarray): d_delta(f^i x, Sing).
        dist_sing (np.ndarray): Untruncated distance of f^i x to Sing (inf without equilibria).
        points (np.ndarray): f^i x for i = 0..n, shape (n+1, m).
    """

    system: str
    origin: np.ndarray
    base: np.ndarray
    delta: float
    period: float = 1.0
    d_cu: int
    lip_bound: float
    a: np.ndarray
    logP: np.ndarray
    logG: np.ndarray
    logdet_cu: np.ndarray
    dist_trunc: np.ndarray
    dist_sing: np.ndarray
    points: np.ndarray
    logG_final: float

    @model_validator(mode="after")
    def _lengths(self):
        n = self.a.shape[0]
        for label in ("logP", "logG", "logdet_cu", "dist_trunc", "dist_sing"):
            if getattr(self, label).shape[0] != n:
                raise ValueError(f"{label} must have length {n}")
        if self.points.shape[0] != n + 1:
            raise ValueError("points must hold n+1 samples")
        return self

    @property
    def n(self) -> int:
        return int(self.a.shape[0])


class PlissConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    A: float
    c1: float
    c2: float

    @model_validator(mode="after")
    def _ordering(self):
        if not (self.A >= self.c2 > self.c1):
            raise ValueError("Pliss constants need A >= c2 > c1")
        return self

    def zeta(self) -> float:
        return (self.c2 - self.c1) / (self.A - self.c1)


class PlissResult(BaseModel):
    indices: List[int]
    ell: int
    density_bound: float
    N: int
    hypothesis_met: bool


class FlowPlissResult(ArrayModel):
    set_mask: np.ndarray
    measure: float
    theta: float
    T: float
    spacing: float

    @property
    def bound(self) -> float:
        return self.theta * self.T


class HyperbolicTimeConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    c0: float = Field(..., gt=0)
    delta0: float = Field(..., gt=0, lt=0.5)
    eps0: float = Field(..., gt=0)
    lip_bound: float = Field(..., gt=0)
    kappa_min: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _eps(self):
        if not self.eps0 < self.c0 / 32:
            raise ValueError("eps0 must lie in (0, c0/32)")
        return self


class HyperbolicTimeCheck(BaseModel):
    index: int
    hyptimex_margin: float
    srtimex_margin: float
    lead_ok: bool


class HyperbolicTimes(BaseModel):
    N: int
    c0: float
    indices: List[int]
    checks: List[HyperbolicTimeCheck]
    density: float
    reason: Optional[str] = None


class EnsembleSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    system: str
    count: int = Field(..., ge=1)
    seed: int = Field(..., ge=0, lt=2**64)
    burn_in: float = Field(DEFAULT_BURN_IN, ge=0)
    sampler: Literal["uniform_box_rejection"] = "uniform_box_rejection"


class Grid(BaseModel):
    """Uniform partition of the box [lo, hi] with ``cells`` cells per axis."""

    model_config = ConfigDict(frozen=True)

    lo: List[float]
    hi: List[float]
    cells: int = Field(..., ge=1)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def size(self) -> int:
        return self.cells**self.dim

    def edges(self) -> List[np.ndarray]:
        return [np.linspace(l, h, self.cells + 1) for l, h in zip(self.lo, self.hi)]

    def centers(self) -> np.ndarray:
        """Cell centers in flat (C-order) cell index order, shape (size, dim)."""
        axes = [0.5 * (e[:-1] + e[1:]) for e in self.edges()]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=-1)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index of each point; points outside the box map to -1."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        scaled = (points - lo) / (hi - lo) * self.cells
        idx = np.floor(scaled).astype(np.int64)
        # the upper face belongs to the last cell
        idx = np.where(points == hi, self.cells - 1, idx)
        inside = np.all((idx >= 0) & (idx < self.cells), axis=-1)
        flat = np.ravel_multi_index(tuple(np.clip(idx, 0, self.cells - 1).T), (self.cells,) * self.dim)
        return np.where(inside, flat, -1)


class EmpiricalMeasure(ArrayModel):
    grid: Grid
    weights: np.ndarray
    sample_count: int

    @model_validator(mode="after")
    def _normalized(self):
        if self.weights.shape != (self.grid.size,):
            raise ValueError("weights must have one entry per grid cell")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        return self

    def l1(self, other: "EmpiricalMeasure") -> float:
        return float(np.abs(self.weights - other.weights).sum())


class DiskSample(ArrayModel):
    """Flat d_cu-disk through ``center`` tangent to ``frame``; particles carry Lebesgue weights."""

    center: np.ndarray
    frame: np.ndarray
    radius: float
    particles: np.ndarray
    weights: np.ndarray

    @field_validator("center", "weights", mode="before")
    @classmethod
    def _vector(cls, value):
        return _as_array(value).reshape(-1)

    @field_validator("frame", "particles", mode="before")
    @classmethod
    def _matrix(cls, value):
        return np.atleast_2d(_as_array(value))

    @model_validator(mode="after")
    def _on_the_disk(self):
        m = self.center.size
        if self.frame.shape[0] != m or self.frame.shape[1] < 1:
            raise ValueError(f"frame must have shape ({m}, k) with k >= 1")
        if not np.allclose(self.frame.T @ self.frame, np.eye(self.frame.shape[1]), atol=1e-8):
            raise ValueError("frame must be orthonormal")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.particles.shape[1] != m or self.particles.shape[0] < 1:
            raise ValueError(f"particles must be a nonempty (P, {m}) array")
        if self.weights.shape != (self.particles.shape[0],):
            raise ValueError("one weight per particle")
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0):
            raise ValueError("weights must be a probability vector")
        offsets = self.particles - self.center
        tol = 1e-8 * max(1.0, self.radius)
        if np.any(np.linalg.norm(offsets, axis=1) > self.radius + tol):
            raise ValueError("particles must lie within radius of the center")
        off_plane = offsets - (offsets @ self.frame) @ self.frame.T
        if np.any(np.linalg.norm(off_plane, axis=1) > tol):
            raise ValueError("particles must lie in the plane of the frame")
        return self
