"""Integration of orbits and tangent frames, distances to the equilibria, system checks."""

import numpy as np
import pytest
from scipy.linalg import expm

from Common import FlowEscapeError, NearSingularityError, TruncatedDistanceDomainError
from FlowLab.flow_core import (
    advance,
    dist_to_equilibria,
    equilibrium_profile,
    step_schedule,
    tangent_advance,
    tangent_flow,
    trace_integral,
    trajectory,
    truncated_distance,
    truncated_distances,
    verify_system,
)
from FlowLab.models import IntegratorConfig, TangentFrame
from FlowLab.systems import REGISTRY, build_polynomial, builtin_systems, get_system


def _blow_up():
    """x' = x^2 on [-10, 10]; from x = 1 the orbit leaves the box at t = 0.9."""
    return build_polynomial(
        {
            "name": "blow_up",
            "dim": 1,
            "terms": [[[1.0, [2]]]],
            "box": {"lo": [-10.0], "hi": [10.0]},
            "equilibria": [[0.0]],
            "lip_bound": 20.0,
            "d_s": 0,
            "d_cu": 1,
        }
    )


def test_step_schedule_splits_exact_and_ragged_times():
    assert step_schedule(1.0, 0.1) == (10, 0.0)
    n, rem = step_schedule(1.05, 0.1)
    assert n == 10
    assert rem == pytest.approx(0.05)
    assert step_schedule(0.0, 0.1) == (0, 0.0)
    with pytest.raises(ValueError):
        step_schedule(-1.0, 0.1)


def test_constant_field_translates(cfg):
    sys = get_system("constant")
    x = advance(sys, [0.0, 0.2, -0.3], 2.5, cfg)
    assert np.allclose(x, [2.5, 0.2, -0.3], atol=1e-12)


def test_linear_flow_matches_matrix_exponential(fine):
    sys = get_system("saddle(1,1,2)")
    x0 = np.array([0.1, 0.2, 0.3])
    A = np.diag([1.0, -1.0, -2.0])
    assert np.allclose(advance(sys, x0, 1.0, fine), expm(A) @ x0, rtol=0, atol=1e-9)


def test_batch_advance_equals_pointwise(cfg):
    sys = get_system("lorenz")
    pts = np.array([[1.0, 1.0, 20.0], [-3.0, 2.0, 25.0]])
    batch = advance(sys, pts, 1.0, cfg)
    for p, q in zip(pts, batch):
        assert np.allclose(advance(sys, p, 1.0, cfg), q, atol=1e-12)


def test_escape_reports_exit_time(cfg):
    with pytest.raises(FlowEscapeError) as info:
        advance(_blow_up(), [1.0], 2.0, cfg)
    assert 0.85 < info.value.exit_time <= 1.0
    assert info.value.exit_code == 3
    assert info.value.to_dict()["exit_time"] == info.value.exit_time


def test_start_outside_box_escapes_at_zero(cfg):
    with pytest.raises(FlowEscapeError) as info:
        advance(_blow_up(), [11.0], 1.0, cfg)
    assert info.value.exit_time == 0.0


def test_trajectory_samples_end_at_horizon(cfg):
    sys = get_system("constant")
    times, points = trajectory(sys, [0.0, 0.0, 0.0], 1.0, cfg, sample_every=7)
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(1.0)
    assert points.shape == (times.size, 3)
    assert np.allclose(points[:, 0], times, atol=1e-12)


def test_truncated_distance_branches():
    eq = np.zeros((1, 3))
    assert truncated_distance([0.05, 0.0, 0.0], eq, 0.1) == pytest.approx(0.05)
    # middle branch: (0.9 / 0.1) * 0.15 + 0.2 - 1
    assert truncated_distance([0.15, 0.0, 0.0], eq, 0.1) == pytest.approx(0.55)
    assert truncated_distance([0.3, 0.0, 0.0], eq, 0.1) == 1.0
    assert truncated_distance([0.3, 0.0, 0.0], [], 0.1) == 1.0


def test_truncated_distance_is_continuous_at_the_breaks():
    eq = np.zeros((1, 3))
    delta = 0.2
    for d in (delta, 2 * delta):
        below = truncated_distance([d - 1e-12, 0, 0], eq, delta)
        above = truncated_distance([d + 1e-12, 0, 0], eq, delta)
        assert abs(below - above) < 1e-9


def test_truncated_distance_rejects_equilibria_and_bad_delta():
    eq = np.zeros((1, 3))
    with pytest.raises(TruncatedDistanceDomainError):
        truncated_distance([0.0, 0.0, 0.0], eq, 0.1)
    with pytest.raises(TruncatedDistanceDomainError):
        truncated_distances([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], eq, 0.1)
    with pytest.raises(ValueError):
        truncated_distance([1.0, 0.0, 0.0], eq, 0.6)


def test_dist_to_equilibria_uses_nearest():
    eq = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    d = dist_to_equilibria([[0.5, 0.0, 0.0], [-3.0, 0.0, 0.0]], eq)
    assert np.allclose(d, [0.5, 2.0])
    assert np.isinf(dist_to_equilibria([0.0, 0.0, 0.0], []))


def test_lorenz_volume_contraction(fine, lorenz_point):
    sys = get_system("lorenz")
    T = 5.0
    flow = tangent_flow(sys, lorenz_point, np.eye(3), T, fine, keep_r=False)
    assert abs(flow.log_r.sum() - T * (-41.0 / 3.0)) < 1e-5
    assert trace_integral(sys, lorenz_point, T, fine) == pytest.approx(T * (-41.0 / 3.0), abs=1e-9)


def test_tangent_flow_factorization(cfg):
    sys = get_system("diagonal(1,0.5,-2)")
    x = np.array([0.3, 0.2, 0.1])
    V = np.random.default_rng(3).standard_normal((3, 2))
    flow = tangent_flow(sys, x, V, 1.0, cfg)
    assert np.allclose(flow.Q.T @ flow.Q, np.eye(2), atol=1e-12)
    assert np.all(np.diag(flow.R) > 0)
    exact = expm(np.diag([1.0, 0.5, -2.0])) @ V
    assert np.allclose(flow.Q @ flow.R, exact, rtol=1e-6, atol=1e-8)


def test_tangent_advance_logdet_on_invariant_plane(cfg):
    sys = get_system("diagonal(1,0.5,-2)")
    frame = TangentFrame(base=np.array([0.3, 0.2, 0.1]), frame=np.eye(3)[:, :2])
    point, pushed, logdet = tangent_advance(sys, frame, 2.0, cfg)
    assert logdet == pytest.approx(3.0, abs=1e-8)
    assert np.allclose(np.abs(pushed.frame[2]), 0.0, atol=1e-14)
    assert np.allclose(point, advance(sys, frame.base, 2.0, cfg))


def test_near_singularity_aborts_tangent_flow(cfg):
    sys = get_system("saddle(1,1,2)")
    with pytest.raises(NearSingularityError):
        tangent_flow(sys, [0.0, 1e-3, 0.0], np.eye(3), 20.0, cfg, near_sing=1e-6)


def test_lorenz_origin_profiles():
    lorenz = equilibrium_profile(get_system("lorenz"))
    origin = lorenz[0]
    assert origin.point == [0.0, 0.0, 0.0]
    assert origin.lorenz_like and not origin.contracting
    contracting = equilibrium_profile(get_system("contracting_lorenz"))[0]
    assert contracting.contracting and not contracting.lorenz_like


def test_builtin_systems_pass_their_checks():
    for sys in builtin_systems():
        report = verify_system(sys)
        assert report.ok, report


def test_verify_system_catches_wrong_jacobian():
    sys = get_system("saddle(1,1,2)")
    broken = sys.model_copy(update={"jacobian": lambda x: np.eye(3)})
    assert not verify_system(broken).ok


def _unit_speed():
    """x' = 1 on [-10, 10]."""
    return build_polynomial(
        {
            "name": "unit_speed",
            "dim": 1,
            "terms": [[[1.0, [0]]]],
            "box": {"lo": [-10.0], "hi": [10.0]},
            "lip_bound": 1.0,
            "d_s": 0,
            "d_cu": 1,
        }
    )


def _inside_trap(sys, rng, n):
    """n points drawn from the middle half of the trap's bounding box."""
    center = 0.5 * (sys.trap_lo + sys.trap_hi)
    half = 0.25 * (sys.trap_hi - sys.trap_lo)
    return center + half * rng.uniform(-1.0, 1.0, size=(n, sys.dim))


def test_trace_integral_checks_the_box_after_the_last_partial_step():
    cfg = IntegratorConfig(step=0.1)
    sys = _unit_speed()
    # six full steps end at 9.98, the 0.05 remainder crosses x = 10
    assert trace_integral(sys, [9.38], 0.6, cfg) == 0.0
    with pytest.raises(FlowEscapeError) as info:
        trace_integral(sys, [9.38], 0.65, cfg)
    assert info.value.exit_time == pytest.approx(0.65)
    with pytest.raises(FlowEscapeError):
        advance(sys, [9.38], 0.65, cfg)


@pytest.mark.parametrize("key", sorted(REGISTRY))
def test_flow_composes_over_ragged_times(key, fine):
    sys = get_system(key)
    rng = np.random.default_rng(11)
    for x in _inside_trap(sys, rng, 3):
        s, t = rng.uniform(0.2, 0.7, size=2)
        two_legs = advance(sys, advance(sys, x, s, fine), t, fine)
        one_leg = advance(sys, x, s + t, fine)
        assert np.allclose(two_legs, one_leg, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("key", sorted(REGISTRY))
def test_volume_change_matches_trace_integral(key, fine):
    sys = get_system(key)
    rng = np.random.default_rng(12)
    x = _inside_trap(sys, rng, 1)[0]
    T = 2.0
    flow = tangent_flow(sys, x, np.eye(sys.dim), T, fine, keep_r=False)
    logdet = float(flow.log_r.sum())
    assert trace_integral(sys, x, T, fine) == pytest.approx(logdet, abs=1e-6)
    assert flow.trace_integral == pytest.approx(logdet, abs=1e-6)


@pytest.mark.parametrize("key", ["lorenz", "contracting_lorenz", "hopf", "bistable"])
def test_trapping_ball_is_forward_invariant(key, cfg):
    sys = get_system(key)
    rng = np.random.default_rng(13)
    center = 0.5 * (sys.trap_lo + sys.trap_hi)
    radius = 0.5 * float(sys.trap_hi[0] - sys.trap_lo[0])
    directions = rng.standard_normal((8, sys.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    points = center + 0.95 * radius * rng.uniform(0.0, 1.0, size=(8, 1)) ** (1.0 / 3.0) * directions
    assert np.all(sys.in_trap(points))
    for _ in range(50):
        points = advance(sys, points, 1.0, cfg)
        assert np.all(sys.in_trap(points))
