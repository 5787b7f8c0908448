"""Pliss times for sequences and sampled functions, hyperbolic times of cocycle traces."""

import numpy as np
import pytest

from Common import PlissInputError, PlissPreconditionError
from FlowLab.lpf import cocycle_trace
from FlowLab.models import CocycleTrace, HyperbolicTimeConfig, PlissConfig
from FlowLab.pliss import (
    NUE_SUM_UNMET,
    flow_pliss,
    flow_pliss_oracle,
    hyperbolic_times,
    hyperbolic_times_oracle,
    pliss_oracle,
    pliss_times,
)
from FlowLab.systems import get_system


def _trace(a, dist=None, lip=0.125):
    """Synthetic cocycle trace; only ``a`` and the distances matter for hyperbolic times."""
    a = np.asarray(a, dtype=float)
    n = a.size
    dist = np.full(n, np.inf) if dist is None else np.asarray(dist, dtype=float)
    zeros = np.zeros(n)
    return CocycleTrace(
        system="synthetic",
        origin=np.zeros(3),
        base=np.zeros(3),
        delta=0.01,
        d_cu=2,
        lip_bound=lip,
        a=a,
        logP=-a,
        logG=zeros,
        logdet_cu=zeros,
        dist_trunc=np.ones(n),
        dist_sing=dist,
        points=np.zeros((n + 1, 3)),
        logG_final=0.0,
    )


def test_pliss_times_small_example():
    result = pliss_times([1.0, -1.0, 1.0], PlissConfig(A=1.0, c1=0.0, c2=0.25))
    assert result.indices == [1, 3]
    assert result.ell == 2
    assert result.N == 3
    assert result.hypothesis_met


def test_pliss_times_agree_with_exhaustive_check():
    cfg = PlissConfig(A=1.0, c1=0.125, c2=0.25)
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        N = int(rng.integers(1, 201))
        # dyadic terms keep every partial sum exact
        a = rng.integers(-8, 9, size=N) / 8.0
        result = pliss_times(a, cfg)
        assert result.indices == pliss_oracle(a, cfg.c1)
        if a.sum() >= cfg.c2 * N:
            assert result.hypothesis_met
            assert result.ell > cfg.zeta() * N


def test_pliss_times_name_the_offending_term():
    with pytest.raises(PlissInputError) as info:
        pliss_times([0.5, 2.0, 3.0], PlissConfig(A=1.0, c1=0.0, c2=0.5))
    assert info.value.index == 2
    assert info.value.context["value"] == 2.0


def test_pliss_config_ordering():
    with pytest.raises(ValueError):
        PlissConfig(A=1.0, c1=0.5, c2=0.25)


def _dyadic_profile(rng, M, spacing):
    """H sampled on a grid whose slopes lie in (A, c + eps) on average below c."""
    while True:
        k = rng.integers(57, 68, size=M)
        if k.sum() < 64 * M:
            break
    slopes = k / 64.0
    return np.concatenate([[0.0], np.cumsum(slopes * spacing)])


def test_flow_pliss_set_is_large_and_matches_double_loop():
    c, eps, A = 1.0, 0.0625, 0.875
    spacing, M = 1.0 / 16.0, 160
    rng = np.random.default_rng(7)
    for _ in range(100):
        H = _dyadic_profile(rng, M, spacing)
        result = flow_pliss(H, spacing, c, eps, A)
        assert result.theta == pytest.approx(1.0 / 3.0)
        assert result.measure >= result.bound - spacing
        assert np.array_equal(result.set_mask, flow_pliss_oracle(H, spacing, c, eps))


def test_flow_pliss_times_survive_a_unit_shift():
    c, eps, A = 1.0, 0.0625, 0.875
    spacing, M = 1.0 / 16.0, 160
    shift, window = 16, 32
    # slopes exceed A: H(s) - H(tau + 1) < (c + eps)(s - tau - 1) + (c + eps - A)
    slack = (c + eps - A) * shift / window
    t = spacing * np.arange(M + 1)
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(50):
        H = _dyadic_profile(rng, M, spacing)
        result = flow_pliss(H, spacing, c, eps, A)
        for i in np.flatnonzero(result.set_mask):
            j = i + shift
            later = np.arange(j + window, M + 1)
            if later.size == 0:
                continue
            assert np.all(H[later] - H[j] < (c + eps + slack) * (t[later] - t[j]))
            checked += 1
    assert checked > 0


def test_flow_pliss_preconditions():
    spacing = 0.5
    good = np.array([0.0, 0.45, 0.9, 1.35])
    flow_pliss(good, spacing, 1.0, 0.1, 0.5)
    with pytest.raises(PlissPreconditionError):
        flow_pliss(good + 0.1, spacing, 1.0, 0.1, 0.5)
    with pytest.raises(PlissPreconditionError):
        flow_pliss(np.array([0.0, 0.6, 1.2, 1.8]), spacing, 1.0, 0.1, 0.5)
    with pytest.raises(PlissPreconditionError):
        flow_pliss(good, spacing, 1.0, 0.1, 0.95)
    with pytest.raises(PlissPreconditionError):
        flow_pliss(good, spacing, 1.0, -0.1, 0.5)


def test_hyperbolic_times_without_equilibria_are_pliss_times():
    hcfg = HyperbolicTimeConfig(c0=0.5, delta0=0.25, eps0=0.01, lip_bound=0.125)
    rng = np.random.default_rng(11)
    for _ in range(200):
        N = int(rng.integers(10, 120))
        a = -rng.integers(-2, 9, size=N) / 8.0
        times = hyperbolic_times(_trace(a), hcfg)
        assert times.indices == hyperbolic_times_oracle(_trace(a), hcfg)
        assert [c.index for c in times.checks] == times.indices
        assert all(c.hyptimex_margin >= 0 and c.srtimex_margin > 0 for c in times.checks)


def test_close_approach_blocks_later_hyperbolic_times():
    hcfg = HyperbolicTimeConfig(c0=0.5, delta0=0.25, eps0=0.01, lip_bound=0.125)
    dist = np.full(100, np.inf)
    dist[3] = 2.0**-20
    trace = _trace(-np.ones(100), dist)
    times = hyperbolic_times(trace, hcfg)
    assert times.indices == [1, 2, 3]
    assert times.indices == hyperbolic_times_oracle(trace, hcfg)


def test_unmet_sum_hypothesis_gives_no_times():
    hcfg = HyperbolicTimeConfig(c0=0.5, delta0=0.25, eps0=0.01, lip_bound=0.125)
    times = hyperbolic_times(_trace(np.zeros(50)), hcfg)
    assert times.indices == []
    assert times.reason == NUE_SUM_UNMET
    assert times.density == 0.0


def test_hyperbolic_time_config_bounds():
    with pytest.raises(ValueError):
        HyperbolicTimeConfig(c0=0.5, delta0=0.25, eps0=0.02, lip_bound=1.0)
    with pytest.raises(ValueError):
        HyperbolicTimeConfig(c0=0.5, delta0=0.6, eps0=0.01, lip_bound=1.0)


@pytest.mark.slow
def test_lorenz_hyperbolic_times_have_no_false_positives(cfg, lorenz_point):
    sys = get_system("lorenz")
    trace = cocycle_trace(sys, lorenz_point, 200, 0.01, cfg, warm=5.0)
    hcfg = HyperbolicTimeConfig(c0=0.1, delta0=0.01, eps0=0.001, lip_bound=sys.lip_bound)
    times = hyperbolic_times(trace, hcfg)
    allowed = set(hyperbolic_times_oracle(trace, hcfg, slack=1e-9))
    assert set(times.indices) <= allowed
