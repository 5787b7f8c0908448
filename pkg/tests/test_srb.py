"""Time averages, occupation measures, disk pushforwards, clustering and basins."""

import pickle

import numpy as np
import pytest
from pydantic import ValidationError

from Common import ConfigError, EmptyMeasureError, GridMismatchError
from FlowLab.ensemble import sample_initial_conditions
from FlowLab.models import DiskSample, EmpiricalMeasure, EnsembleSpec, Grid, HyperbolicTimeConfig, IntegratorConfig
from FlowLab.srb import (
    CoordinateObservable,
    basin_coverage,
    birkhoff_average,
    cluster_measures,
    coordinate_panel,
    disk_pushforward,
    empirical_measure,
    flow_smooth,
    marginal,
    measure_expectation,
    measure_from_points,
    orbit_statistics,
    pushforward_at_hyperbolic_times,
    pushforward_family,
    sample_disk,
    trap_grid,
)
from FlowLab.systems import get_system

UNIT_CUBE = Grid(lo=[0.0, 0.0, 0.0], hi=[1.0, 1.0, 1.0], cells=4)


def _point_mass(grid, cell):
    w = np.zeros(grid.size)
    w[cell] = 1.0
    return EmpiricalMeasure(grid=grid, weights=w, sample_count=1)


def test_birkhoff_average_of_one_is_one(cfg):
    result = birkhoff_average(get_system("lorenz"), [1.0, 1.0, 20.0], lambda x: 1.0, 5.0, cfg)
    assert result.value == pytest.approx(1.0, abs=1e-12)
    assert result.times[-1] == pytest.approx(5.0)
    assert np.allclose(result.curve, 1.0)


def test_birkhoff_average_decays_at_a_sink(cfg):
    sys = get_system("diagonal(-1,-1,-2)")
    square = lambda x: float(np.dot(x, x))
    short = birkhoff_average(sys, [0.5, 0.5, 0.5], square, 10.0, cfg)
    long = birkhoff_average(sys, [0.5, 0.5, 0.5], square, 50.0, cfg)
    # int_0^inf |x(t)|^2 dt = 0.25 + 0.0625
    assert long.value == pytest.approx(0.3125 / 50.0, rel=1e-3)
    assert long.value < short.value
    assert long.curve[-1] == pytest.approx(long.value)


def test_occupation_at_a_sink_is_a_point_mass(cfg):
    sys = get_system("bistable")
    meas = empirical_measure(sys, [1.0, 0.0, 0.0], 5.0, 5, cfg)
    assert np.count_nonzero(meas.weights) == 1
    assert meas.weights.max() == 1.0
    assert meas.sample_count == 501


def test_occupation_of_hopf_cycle_stays_near_the_circle(cfg):
    sys = get_system("hopf(1,1)")
    res = 7
    meas = empirical_measure(sys, [1.0, 0.0, 0.0], 20.0, res, cfg)
    grid = meas.grid
    width = (grid.hi[0] - grid.lo[0]) / res
    centers = grid.centers()[meas.weights > 0]
    r = np.hypot(centers[:, 0], centers[:, 1])
    assert np.all(np.abs(centers[:, 2]) <= width / 2 + 1e-12)
    assert np.all(np.abs(r - 1.0) <= width * np.sqrt(2) / 2 + 1e-12)


def test_flow_smooth_keeps_a_fixed_family():
    meas = _point_mass(UNIT_CUBE, 5)
    assert flow_smooth([meas] * 10) is meas


def test_flow_smooth_rejects_mixed_grids():
    other = Grid(lo=[0.0, 0.0, 0.0], hi=[1.0, 1.0, 1.0], cells=2)
    with pytest.raises(GridMismatchError):
        flow_smooth([_point_mass(UNIT_CUBE, 0), _point_mass(other, 0)])
    with pytest.raises(EmptyMeasureError):
        flow_smooth([])


def test_flow_smooth_of_a_translated_point(cfg):
    sys = get_system("constant")
    grid = trap_grid(sys, 10)
    family = pushforward_family(sys, [[0.05, 0.0, 0.0]], grid, 10, cfg)
    smooth = flow_smooth(family)
    occupied = smooth.weights[smooth.weights > 0]
    assert occupied.size == 5
    assert np.allclose(occupied, 0.2)


def test_measure_from_points_drops_outside_mass():
    meas = measure_from_points([[0.1, 0.1, 0.1], [2.0, 0.0, 0.0]], UNIT_CUBE)
    assert meas.sample_count == 1
    assert meas.weights.sum() == pytest.approx(1.0)
    with pytest.raises(EmptyMeasureError):
        measure_from_points([[2.0, 0.0, 0.0]], UNIT_CUBE)


def test_trap_grid_needs_a_solid_box():
    with pytest.raises(ConfigError):
        trap_grid(get_system("drift(1,1)"), 4)


def _disk(n):
    """n particles spread along the x axis of a disk about (0.5, 0.5, 0.5)."""
    particles = np.full((n, 3), 0.5)
    particles[:, 0] += np.linspace(-0.05, 0.05, n)
    return DiskSample(
        center=np.full(3, 0.5),
        frame=np.eye(3)[:, :2],
        radius=0.1,
        particles=particles,
        weights=np.full(n, 1.0 / n),
    )


def test_disk_sample_rejects_inconsistent_disks():
    good = _disk(3)
    fields = good.model_dump()
    with pytest.raises(ValidationError, match="plane"):
        DiskSample(**{**fields, "particles": np.array([[0.5, 0.5, 0.55]] * 3)})
    with pytest.raises(ValidationError, match="radius of the center"):
        DiskSample(**{**fields, "particles": np.array([[0.7, 0.5, 0.5]] * 3)})
    with pytest.raises(ValidationError, match="orthonormal"):
        DiskSample(**{**fields, "frame": 2.0 * np.eye(3)[:, :2]})
    with pytest.raises(ValidationError, match="probability"):
        DiskSample(**{**fields, "weights": np.array([0.5, 0.5, 0.5])})
    with pytest.raises(ValidationError, match="one weight per particle"):
        DiskSample(**{**fields, "weights": np.array([0.5, 0.5])})
    with pytest.raises(ValidationError, match="positive"):
        DiskSample(**{**fields, "radius": 0.0})


def test_pushforward_mass_and_shape():
    rng = np.random.default_rng(5)
    P, n_max = 6, 8
    orbits = [rng.uniform(0.01, 0.99, size=(n_max + 1, 3)) for _ in range(P)]
    htimes = [list(range(1, n_max + 1)) for _ in range(P)]
    result = pushforward_at_hyperbolic_times(
        get_system("constant"), _disk(P), orbits, htimes, n_max, UNIT_CUBE
    )
    expected = measure_from_points(np.concatenate([o[1:n_max] for o in orbits]), UNIT_CUBE)
    assert np.allclose(result.measure.weights, expected.weights)
    assert result.retained_pairs == P * (n_max - 1)
    assert result.retained_fraction == pytest.approx((n_max - 1) / n_max)


def test_pushforward_counts_only_hyperbolic_times():
    orbits = [np.full((5, 3), 0.1), np.full((5, 3), 0.9)]
    orbits[0][2] = 0.6
    result = pushforward_at_hyperbolic_times(
        get_system("constant"), _disk(2), orbits, [[2], []], 4, UNIT_CUBE
    )
    assert result.retained_pairs == 1
    assert result.retained_fraction == pytest.approx(0.5 / 4)
    assert result.measure.weights[UNIT_CUBE.cell_index([0.6, 0.6, 0.6])[0]] == 1.0


def test_pushforward_without_hyperbolic_times_is_empty():
    orbits = [np.zeros((4, 3)), None]
    with pytest.raises(EmptyMeasureError):
        pushforward_at_hyperbolic_times(
            get_system("constant"), _disk(2), orbits, [[], []], 3, UNIT_CUBE, excluded_count=1
        )


def test_disk_lies_in_the_center_unstable_plane(cfg):
    sys = get_system("diagonal(1,0.5,-2)")
    disk = sample_disk(sys, [0.003, 0.02, 0.1], 0.01, 50, cfg, seed=2, warm=5.0)
    offsets = disk.particles - disk.center
    assert np.all(np.linalg.norm(offsets, axis=1) <= 0.01 + 1e-12)
    assert np.allclose(offsets - offsets @ disk.frame @ disk.frame.T, 0.0, atol=1e-12)
    assert disk.weights.sum() == pytest.approx(1.0)
    assert disk.particles.shape == (50, 3)


def test_disk_pushforward_on_neutral_flow_is_empty(cfg):
    sys = get_system("constant")
    disk = sample_disk(sys, [-0.5, 0.0, 0.0], 0.1, 4, cfg, warm=1.0)
    hcfg = HyperbolicTimeConfig(c0=0.1, delta0=0.01, eps0=0.001, lip_bound=sys.lip_bound)
    with pytest.raises(EmptyMeasureError):
        disk_pushforward(sys, disk, 20, hcfg, trap_grid(sys, 4), cfg, threads=1)


def test_cluster_identical_and_distinct_measures():
    a = _point_mass(UNIT_CUBE, 0)
    b = _point_mass(UNIT_CUBE, 63)
    same = cluster_measures([a, a, a], 0.5)
    assert same.clusters == [[0, 1, 2]]
    split = cluster_measures([a, b, a], 0.5)
    assert split.clusters == [[0, 2], [1]]
    assert split.representatives[1].l1(b) == 0.0
    assert cluster_measures([], 0.5).clusters == []


def test_cluster_partition_is_order_invariant():
    rng = np.random.default_rng(1)
    base = [_point_mass(UNIT_CUBE, c) for c in (0, 10, 20)]
    ms = [base[i] for i in rng.integers(0, 3, size=12)]
    labels = [int(np.argmax(m.weights)) for m in ms]

    def partition(order):
        result = cluster_measures([ms[i] for i in order], 0.5)
        return sorted(sorted(labels[order[i]] for i in members) for members in result.clusters)

    order = np.arange(len(ms))
    assert partition(order) == partition(rng.permutation(order))


def test_cluster_panels_are_member_means():
    a, b = _point_mass(UNIT_CUBE, 0), _point_mass(UNIT_CUBE, 63)
    result = cluster_measures([a, b, a], 0.5, panels=[[1.0, 2.0], [5.0, 5.0], [3.0, 4.0]])
    assert result.panels == [[2.0, 3.0], [5.0, 5.0]]


def test_expectation_and_marginal_of_a_point_mass():
    cell = int(UNIT_CUBE.cell_index([0.6, 0.1, 0.9])[0])
    meas = _point_mass(UNIT_CUBE, cell)
    assert measure_expectation(meas, CoordinateObservable(0)) == pytest.approx(0.625)
    assert measure_expectation(meas, CoordinateObservable(2, 2)) == pytest.approx(0.875**2)
    rows = marginal(meas, (0, 2))
    assert rows.shape == (16, 3)
    assert rows[:, 2].sum() == pytest.approx(1.0)
    hit = rows[rows[:, 2] > 0][0]
    assert hit[:2] == pytest.approx([0.625, 0.875])
    swapped = marginal(meas, (2, 0))
    assert swapped[swapped[:, 2] > 0][0][:2] == pytest.approx([0.875, 0.625])
    with pytest.raises(ValueError):
        marginal(meas, (0, 0))


def test_coordinate_observables_pickle_and_vectorize():
    panel = coordinate_panel(3)
    assert [repr(o) for o in panel] == ["x0^1", "x1^1", "x2^1", "x0^2", "x1^2", "x2^2"]
    restored = pickle.loads(pickle.dumps(panel))
    pts = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]])
    assert np.allclose(restored[5](pts), [9.0, 0.25])


def test_bistable_basins_split_by_the_separating_plane():
    ens = EnsembleSpec(system="bistable", count=40, seed=3, burn_in=0.0)
    panel = coordinate_panel(3)
    targets = [[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]]
    coarse = IntegratorConfig(step=0.05)
    coverage = basin_coverage(ens, targets, panel, 0.05, coarse, T_horizon=200.0, threads=1)
    origins = sample_initial_conditions(get_system("bistable"), 40, 3)
    right = float(np.mean(origins[:, 0] > 0))
    assert sum(coverage.fractions) + coverage.remainder == pytest.approx(1.0)
    assert coverage.remainder <= 0.05
    assert coverage.fractions[0] == pytest.approx(right, abs=0.05)
    for x0, assigned in zip(origins, coverage.assignments):
        if assigned >= 0:
            assert assigned == (0 if x0[0] > 0 else 1)


LORENZ_PANEL = [CoordinateObservable(2), CoordinateObservable(0, 2), CoordinateObservable(2, 2)]


@pytest.mark.slow
def test_lorenz_orbits_share_one_physical_measure(cfg):
    sys = get_system("lorenz")
    grid = trap_grid(sys, 6)
    ens = EnsembleSpec(system="lorenz", count=4, seed=17, burn_in=10.0)
    measures, panels, excluded = orbit_statistics(ens, sys, 2000.0, grid, LORENZ_PANEL, cfg, threads=2)
    assert excluded == 0
    z_means = [p[0] for p in panels]
    assert max(z_means) - min(z_means) < 0.02 * np.mean(z_means)
    for i in range(len(measures)):
        for j in range(i):
            assert measures[i].l1(measures[j]) < 0.15
    clustered = cluster_measures(measures, 0.3, panels=[p.tolist() for p in panels])
    assert len(clustered.clusters) == 1

    fresh = EnsembleSpec(system="lorenz", count=10, seed=18, burn_in=10.0)
    coverage = basin_coverage(fresh, clustered.panels, LORENZ_PANEL, 0.1, cfg, T_horizon=1000.0, threads=2)
    assert coverage.fractions[0] >= 0.95
    assert coverage.excluded_count == 0


@pytest.mark.slow
def test_lorenz_disk_pushforward_tracks_the_long_orbit(cfg, lorenz_point):
    sys = get_system("lorenz")
    grid = trap_grid(sys, 4)
    disk = sample_disk(sys, lorenz_point, 0.01, 40, cfg, seed=3, warm=5.0)
    hcfg = HyperbolicTimeConfig(c0=0.1, delta0=0.01, eps0=0.001, lip_bound=sys.lip_bound)
    pushed = disk_pushforward(sys, disk, 400, hcfg, grid, cfg, threads=4)
    assert pushed.excluded_count <= 4
    assert pushed.retained_fraction > 0.1
    long_orbit = empirical_measure(sys, lorenz_point, 2000.0, 4, cfg, grid=grid)
    assert pushed.measure.l1(long_orbit) < 0.15
