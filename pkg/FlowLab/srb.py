"""
Empirical physical measures.

Time averages and occupation histograms of long orbits, smoothing along the
flow, pushforwards of Lebesgue measure on center-unstable disks restricted to
hyperbolic times, clustering of histograms and basin coverage by Birkhoff
averages of an observable panel.
"""
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from Common import DEFAULT_WARM, ConfigError, EmptyMeasureError, GridMismatchError, get_service_logger
from Common.in_config import CURVE_POINTS, DEFAULT_FRAME_SEED, ORBIT_CHUNK

from .ensemble import map_orbits, run_ensemble
from .flow_core import advance, step_schedule, trajectory
from .lpf import cocycle_trace, estimate_splitting
from .models import DiskSample, EmpiricalMeasure, EnsembleSpec, Grid, HyperbolicTimeConfig, IntegratorConfig, SystemSpec
from .pliss import hyperbolic_times
from .schemas import BasinCoverage, BirkhoffResult, ClusterResult, PushforwardResult

logger = get_service_logger(__name__)

Observable = Callable[[np.ndarray], Any]


class CoordinateObservable:
    """x -> x[axis] ** power; vectorized over (k, m) arrays and picklable."""

    vectorized = True

    def __init__(self, axis: int, power: int = 1):
        self.axis = axis
        self.power = power

    def __call__(self, x):
        return np.asarray(x, dtype=float)[..., self.axis] ** self.power

    def __repr__(self) -> str:
        return f"x{self.axis}^{self.power}"


def coordinate_panel(dim: int) -> List[CoordinateObservable]:
    """Coordinates and their squares."""
    return [CoordinateObservable(i, p) for p in (1, 2) for i in range(dim)]


def evaluate(obs: Observable, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    if getattr(obs, "vectorized", False):
        return np.asarray(obs(points), dtype=float)
    return np.array([float(obs(p)) for p in points])


def trap_grid(sys: SystemSpec, cells: int) -> Grid:
    if np.any(sys.trap_hi <= sys.trap_lo):
        raise ConfigError("the trapping box is flat; pass an explicit grid", system=sys.name)
    return Grid(lo=sys.trap_lo.tolist(), hi=sys.trap_hi.tolist(), cells=cells)


def orbit_chunks(
    sys: SystemSpec, x, T: float, cfg: IntegratorConfig, chunk: float = ORBIT_CHUNK
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Consecutive orbit pieces (times, points); each piece starts at the last point of the previous one."""
    n, rem = step_schedule(T, chunk)
    spans = [chunk] * n + ([rem] if rem > 0 else [])
    x = np.asarray(x, dtype=float)
    t0 = 0.0
    for span in spans:
        times, points = trajectory(sys, x, span, cfg)
        yield t0 + times, points
        t0 += span
        x = points[-1]


def measure_from_points(points, grid: Grid, weights=None) -> EmpiricalMeasure:
    """Normalized histogram of weighted points; points outside the grid are dropped."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.ones(points.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    idx = grid.cell_index(points)
    inside = idx >= 0
    acc = np.bincount(idx[inside], weights=w[inside], minlength=grid.size)
    total = float(acc.sum())
    if not total > 0:
        raise EmptyMeasureError("no mass inside the grid", points=int(points.shape[0]))
    return EmpiricalMeasure(grid=grid, weights=acc / total, sample_count=int(inside.sum()))


def birkhoff_average(sys: SystemSpec, x, obs: Observable, T_horizon: float, cfg: IntegratorConfig) -> BirkhoffResult:
    """
    (1/T) int_0^T obs(phi_t x) dt by the trapezoid rule on the integrator grid.

    The running average is returned thinned to a few hundred points, always
    including the final time.
    """
    if T_horizon <= 0:
        raise ValueError("the horizon must be positive")
    stride = max(1, step_schedule(T_horizon, cfg.step)[0] // CURVE_POINTS)
    integral = 0.0
    seen = 0
    times_out: List[np.ndarray] = []
    curve_out: List[np.ndarray] = []
    for times, points in orbit_chunks(sys, x, T_horizon, cfg):
        cum = integral + cumulative_trapezoid(evaluate(obs, points), times, initial=0.0)
        integral = float(cum[-1])
        local = np.arange(1, times.size)
        sel = local[(seen + local) % stride == 0]
        if sel.size == 0 or sel[-1] != times.size - 1:
            sel = np.append(sel, times.size - 1)
        times_out.append(times[sel])
        curve_out.append(cum[sel] / times[sel])
        seen += times.size - 1
    times_all = np.concatenate(times_out)
    curve = np.concatenate(curve_out)
    return BirkhoffResult(value=integral / T_horizon, times=times_all, curve=curve)


def _occupation(sys: SystemSpec, x, T: float, grid: Grid, cfg: IntegratorConfig) -> Tuple[np.ndarray, int]:
    counts = np.zeros(grid.size)
    first = True
    for _, points in orbit_chunks(sys, x, T, cfg):
        idx = grid.cell_index(points if first else points[1:])
        counts += np.bincount(idx[idx >= 0], minlength=grid.size)
        first = False
    return counts, int(counts.sum())


def empirical_measure(
    sys: SystemSpec,
    x,
    T_horizon: float,
    grid_res: int,
    cfg: IntegratorConfig,
    grid: Optional[Grid] = None,
) -> EmpiricalMeasure:
    """Occupation histogram of the orbit of x on a uniform grid over the trapping box."""
    grid = grid or trap_grid(sys, grid_res)
    counts, total = _occupation(sys, x, T_horizon, grid, cfg)
    if total == 0:
        raise EmptyMeasureError("orbit never visits the grid", system=sys.name)
    logger.debug("occupation measure", extra={"system": sys.name, "horizon": T_horizon, "samples": total})
    return EmpiricalMeasure(grid=grid, weights=counts / counts.sum(), sample_count=total)


def flow_smooth(meas_t: Sequence[EmpiricalMeasure], grid: Optional[Grid] = None) -> EmpiricalMeasure:
    """
    int_0^1 (phi_t)_* eta dt from a uniform family of slices t = k / len(meas_t).

    A family whose members all coincide is returned unchanged.
    """
    if not meas_t:
        raise EmptyMeasureError("empty measure family")
    grid = grid or meas_t[0].grid
    for k, m in enumerate(meas_t):
        if m.grid != grid:
            raise GridMismatchError("measure family lives on different grids", slice=k)
    W = np.stack([m.weights for m in meas_t])
    if np.all(W == W[0]):
        return meas_t[0]
    mean = W.mean(axis=0)
    return EmpiricalMeasure(
        grid=grid, weights=mean / mean.sum(), sample_count=sum(m.sample_count for m in meas_t)
    )


def pushforward_family(
    sys: SystemSpec, points, grid: Grid, slices: int, cfg: IntegratorConfig
) -> List[EmpiricalMeasure]:
    """Histograms of phi_t(points) for t = k / slices, k = 0..slices-1."""
    if slices < 1:
        raise ValueError("slices must be >= 1")
    P = np.atleast_2d(np.asarray(points, dtype=float))
    family = []
    for k in range(slices):
        if k:
            P = advance(sys, P, 1.0 / slices, cfg)
        family.append(measure_from_points(P, grid))
    return family


def sample_disk(
    sys: SystemSpec,
    center,
    radius: float,
    n_particles: int,
    cfg: IntegratorConfig,
    seed: int = DEFAULT_FRAME_SEED,
    warm: float = DEFAULT_WARM,
) -> DiskSample:
    """
    Flat center-unstable disk with Lebesgue-distributed particles.

    The disk is centered at the base point of the splitting estimate started
    from ``center`` and spanned by its E^cu basis. Particles are uniform in the
    d_cu-ball of the given radius; those outside the trapping region are redrawn.
    """
    if radius <= 0 or n_particles < 1:
        raise ValueError("disk needs a positive radius and at least one particle")
    est = estimate_splitting(sys, center, warm, warm, cfg, seed)
    k = est.d_cu
    rng = np.random.default_rng([seed, 5])
    kept: List[np.ndarray] = []
    drawn = 0
    while len(kept) < n_particles:
        u = rng.standard_normal((n_particles, k))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = radius * rng.uniform(size=(n_particles, 1)) ** (1.0 / k)
        batch = est.base + (r * u) @ est.ecu_basis.T
        kept.extend(p for p in batch[sys.in_trap(batch)][: n_particles - len(kept)])
        drawn += n_particles
        if drawn > 100 * n_particles and len(kept) < n_particles:
            raise ConfigError("disk lies outside the trapping region", system=sys.name)
    particles = np.array(kept)
    return DiskSample(
        center=est.base,
        frame=est.ecu_basis,
        radius=radius,
        particles=particles,
        weights=np.full(n_particles, 1.0 / n_particles),
    )


def pushforward_at_hyperbolic_times(
    sys: SystemSpec,
    disk: DiskSample,
    orbits: Sequence[Optional[np.ndarray]],
    htimes: Sequence[Sequence[int]],
    n_max: int,
    grid: Grid,
    excluded_count: int = 0,
) -> PushforwardResult:
    """
    (1/n_max) sum_{j < n_max} f^j_* Leb_D, each particle counted only at its own hyperbolic times.

    ``orbits[p]`` holds f^j(p) for j = 0..n_max (None for excluded particles) and
    ``htimes[p]`` its hyperbolic times. Before normalization the accumulated mass
    is retained_pairs / (n_max * particles) for uniform disk weights.
    """
    acc = np.zeros(grid.size)
    pairs = 0
    for w, pts, ht in zip(disk.weights, orbits, htimes):
        if pts is None:
            continue
        js = [j for j in ht if j < n_max]
        if not js:
            continue
        idx = grid.cell_index(np.asarray(pts)[js])
        idx = idx[idx >= 0]
        np.add.at(acc, idx, w / n_max)
        pairs += int(idx.size)
    mass = float(acc.sum())
    if pairs == 0 or not mass > 0:
        raise EmptyMeasureError("no particle has a hyperbolic time before n_max", system=sys.name, n_max=n_max)
    logger.info(
        "hyperbolic-time pushforward",
        extra={"system": sys.name, "pairs": pairs, "particles": len(disk.weights), "mass": mass},
    )
    return PushforwardResult(
        measure=EmpiricalMeasure(grid=grid, weights=acc / mass, sample_count=pairs),
        retained_fraction=mass,
        retained_pairs=pairs,
        particle_count=len(disk.weights),
        excluded_count=excluded_count,
    )


def _particle_job(sys, x, cfg, rng, n_max, hcfg, frame, period):
    trace = cocycle_trace(sys, x, n_max, hcfg.delta0, cfg, period=period, frame=frame)
    return trace.points, hyperbolic_times(trace, hcfg).indices


def disk_pushforward(
    sys: SystemSpec,
    disk: DiskSample,
    n_max: int,
    hcfg: HyperbolicTimeConfig,
    grid: Grid,
    cfg: IntegratorConfig,
    period: float = 1.0,
    threads: Optional[int] = None,
) -> PushforwardResult:
    """Cocycle trace and hyperbolic times of every disk particle, then the pushforward."""
    params = {"n_max": n_max, "hcfg": hcfg, "frame": disk.frame, "period": period}
    outcomes = map_orbits(sys.source, disk.particles, _particle_job, params, cfg, seed=0, threads=threads)
    orbits = [None if o.error else o.value[0] for o in outcomes]
    htimes = [[] if o.error else o.value[1] for o in outcomes]
    excluded = sum(o.error is not None for o in outcomes)
    return pushforward_at_hyperbolic_times(sys, disk, orbits, htimes, n_max, grid, excluded)


def cluster_measures(
    ms: Sequence[EmpiricalMeasure], radius: float, panels: Optional[Sequence[Sequence[float]]] = None
) -> ClusterResult:
    """
    Single-linkage clustering under the L1 distance of histograms.

    Clusters are listed by their smallest member index; representatives are
    cluster means. With ``panels`` (one vector of observable averages per
    measure) each cluster also gets the mean panel of its members.
    """
    if not ms:
        return ClusterResult(clusters=[], representatives=[], radius=radius)
    grid = ms[0].grid
    for k, m in enumerate(ms):
        if m.grid != grid:
            raise GridMismatchError("measures live on different grids", index=k)
    W = np.stack([m.weights for m in ms])
    adjacency = csr_matrix(cdist(W, W, "cityblock") < radius)
    _, labels = connected_components(adjacency, directed=False)
    groups = {}
    for i, label in enumerate(labels):
        groups.setdefault(int(label), []).append(i)
    clusters = sorted(groups.values(), key=min)
    reps = []
    for members in clusters:
        mean = W[members].mean(axis=0)
        reps.append(
            EmpiricalMeasure(grid=grid, weights=mean / mean.sum(), sample_count=sum(ms[i].sample_count for i in members))
        )
    rep_panels = []
    if panels is not None:
        P = np.asarray(panels, dtype=float)
        rep_panels = [P[members].mean(axis=0).tolist() for members in clusters]
    logger.info("measures clustered", extra={"measures": len(ms), "clusters": len(clusters), "radius": radius})
    return ClusterResult(clusters=clusters, representatives=reps, radius=radius, panels=rep_panels)


def measure_expectation(meas: EmpiricalMeasure, obs: Observable) -> float:
    """Integral of obs against the histogram, each cell collapsed to its center."""
    return float(meas.weights @ evaluate(obs, meas.grid.centers()))


def marginal(meas: EmpiricalMeasure, axes: Sequence[int] = (0, 2)) -> np.ndarray:
    """
    Plot data of the marginal on the given axes.

    Returns:
        np.ndarray: Rows (center coordinates..., weight), one per cell of the projected grid.
    """
    grid = meas.grid
    axes = list(axes)
    if len(set(axes)) != len(axes) or any(not 0 <= a < grid.dim for a in axes):
        raise ValueError("axes must be distinct grid axes")
    W = meas.weights.reshape((grid.cells,) * grid.dim)
    other = tuple(a for a in range(grid.dim) if a not in axes)
    M = np.transpose(W.sum(axis=other), [sorted(axes).index(a) for a in axes])
    edges = grid.edges()
    mids = [0.5 * (edges[a][:-1] + edges[a][1:]) for a in axes]
    mesh = np.meshgrid(*mids, indexing="ij")
    return np.column_stack([g.reshape(-1) for g in mesh] + [M.reshape(-1)])


def _orbit_statistics_job(sys, x, cfg, rng, horizon, grid, panel):
    counts = np.zeros(grid.size)
    integrals = np.zeros(len(panel))
    first = True
    for times, points in orbit_chunks(sys, x, horizon, cfg):
        idx = grid.cell_index(points if first else points[1:])
        counts += np.bincount(idx[idx >= 0], minlength=grid.size)
        for k, obs in enumerate(panel):
            integrals[k] += trapezoid(evaluate(obs, points), times)
        first = False
    return counts, integrals / horizon


def orbit_statistics(
    ens: EnsembleSpec,
    sys: SystemSpec,
    T_horizon: float,
    grid: Grid,
    panel: Sequence[Observable],
    cfg: IntegratorConfig,
    threads: Optional[int] = None,
) -> Tuple[List[Optional[EmpiricalMeasure]], List[Optional[np.ndarray]], int]:
    """Occupation measure and panel Birkhoff averages of every ensemble orbit, in one pass each."""
    params = {"horizon": T_horizon, "grid": grid, "panel": list(panel)}
    outcomes = run_ensemble(ens, _orbit_statistics_job, params, cfg, threads)
    measures: List[Optional[EmpiricalMeasure]] = []
    panels: List[Optional[np.ndarray]] = []
    for o in outcomes:
        if o.error or o.value[0].sum() == 0:
            measures.append(None)
            panels.append(None)
            continue
        counts, averages = o.value
        measures.append(EmpiricalMeasure(grid=grid, weights=counts / counts.sum(), sample_count=int(counts.sum())))
        panels.append(averages)
    return measures, panels, sum(m is None for m in measures)


def _panel_job(sys, x, cfg, rng, horizon, panel):
    integrals = np.zeros(len(panel))
    for times, points in orbit_chunks(sys, x, horizon, cfg):
        for k, obs in enumerate(panel):
            integrals[k] += trapezoid(evaluate(obs, points), times)
    return integrals / horizon


def _targets(representatives, obs_panel) -> np.ndarray:
    rows = []
    for rep in representatives:
        if isinstance(rep, EmpiricalMeasure):
            rows.append([measure_expectation(rep, obs) for obs in obs_panel])
        else:
            rows.append([float(v) for v in rep])
    return np.asarray(rows, dtype=float).reshape(len(rows), len(obs_panel))


def basin_coverage(
    ens: EnsembleSpec,
    representatives: Sequence[Union[EmpiricalMeasure, Sequence[float]]],
    obs_panel: Sequence[Observable],
    tol: float,
    cfg: IntegratorConfig,
    T_horizon: float = 200.0,
    threads: Optional[int] = None,
) -> BasinCoverage:
    """
    Fractions of an ensemble whose Birkhoff averages match each representative.

    A representative is either a measure (its panel is integrated cell by cell)
    or a panel vector. An orbit is assigned to the closest representative whose
    panel lies within tol * (1 + |b|) of the orbit's averages b in every entry;
    orbits matching none form the remainder.
    """
    targets = _targets(representatives, obs_panel)
    outcomes = run_ensemble(ens, _panel_job, {"horizon": T_horizon, "panel": list(obs_panel)}, cfg, threads)
    assignments: List[int] = []
    hits = np.zeros(len(targets))
    valid = 0
    for o in outcomes:
        if o.error:
            assignments.append(-1)
            continue
        valid += 1
        b = np.asarray(o.value)
        scaled = np.abs(targets - b) / (tol * (1.0 + np.abs(b)))
        worst = scaled.max(axis=1) if len(targets) else np.array([])
        ok = np.flatnonzero(worst <= 1.0)
        if ok.size:
            r = int(ok[np.argmin(worst[ok])])
            hits[r] += 1
            assignments.append(r)
        else:
            assignments.append(-1)
    fractions = (hits / valid).tolist() if valid else [0.0] * len(targets)
    excluded = len(outcomes) - valid
    logger.info(
        "basin coverage",
        extra={"representatives": len(targets), "orbits": len(outcomes), "excluded": excluded},
    )
    return BasinCoverage(
        fractions=fractions,
        remainder=1.0 - float(sum(fractions)) if valid else 1.0,
        assignments=assignments,
        excluded_count=excluded,
        tol=tol,
    )
