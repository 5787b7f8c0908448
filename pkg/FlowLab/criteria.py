from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from Common import (
    DEFAULT_WARM,
    INCONCLUSIVE_BAND,
    ConfigError,
    NearSingularityError,
    UnsupportedDimensionError,
    get_service_logger,
)
from Common.in_config import CURVE_POINTS, DEFAULT_FRAME_SEED, EQUILIBRIUM_HIT, MULTIPLICATIVITY_WARM

from .ensemble import OrbitOutcome, run_ensemble
from .flow_core import dist_to_equilibria, step_schedule, tangent_advance, tangent_flow, trajectory, truncate
from .lpf import center_unstable_basis, center_unstable_frame, cocycle_trace
from .models import CocycleTrace, EnsembleSpec, IntegratorConfig, SystemSpec, TangentFrame
from .schemas import CriterionReport, OrbitVerdict, SrGridCell, Verdict
from .systems import get_system

logger = get_service_logger(__name__)

DEFAULT_DELTA = 0.01
VACUOUS_SR = "vacuous PASS: the system has no equilibria, d_delta is identically 1"
PILOT_NOTE = "thresholds for Lorenz-type systems are pilot-run calibrations"


def classify(value: float, threshold: float, below: bool) -> Verdict:
    """PASS/FAIL against a strict threshold; INCONCLUSIVE within 10% of it."""
    if abs(value - threshold) <= INCONCLUSIVE_BAND * abs(threshold):
        return "INCONCLUSIVE"
    passed = value < threshold if below else value >= threshold
    return "PASS" if passed else "FAIL"


def running_mean(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / np.arange(1, values.size + 1)


def tail_half(curve) -> np.ndarray:
    """Final half of a running curve, the finite-horizon stand-in for limsup/liminf."""
    curve = np.asarray(curve, dtype=float)
    return curve[curve.size // 2 :]


def _thin(curve: np.ndarray) -> np.ndarray:
    if curve.size <= CURVE_POINTS:
        return curve
    idx = np.unique(np.linspace(0, curve.size - 1, CURVE_POINTS).round().astype(int))
    return curve[idx]


def _job_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31))


def _excluded(outcome: OrbitOutcome) -> OrbitVerdict:
    return OrbitVerdict(index=outcome.index, origin=outcome.origin, error=outcome.error)


def _below_verdict(outcome: OrbitOutcome, running: np.ndarray, threshold: float) -> OrbitVerdict:
    half = tail_half(running)
    value, low = float(half.mean()), float(half.min())
    return OrbitVerdict(
        index=outcome.index,
        origin=outcome.origin,
        value=value,
        liminf=low,
        verdict=classify(value, threshold, below=True),
        weak_verdict=classify(low, threshold, below=True),
        running=running.tolist(),
    )


def _above_verdict(outcome: OrbitOutcome, running: np.ndarray, threshold: float) -> OrbitVerdict:
    half = tail_half(running)
    value = float(running[-1])
    return OrbitVerdict(
        index=outcome.index,
        origin=outcome.origin,
        value=value,
        liminf=float(half.min()),
        verdict=classify(value, threshold, below=False),
        weak_verdict=classify(float(half.max()), threshold, below=False),
        running=running.tolist(),
    )


def _fraction(verdicts: Sequence[OrbitVerdict], attr: str) -> float:
    valid = [v for v in verdicts if v.error is None]
    if not valid:
        return 0.0
    return sum(getattr(v, attr) == "PASS" for v in valid) / len(valid)


def _report(
    criterion: str,
    sys: SystemSpec,
    ens: EnsembleSpec,
    thresholds: Dict[str, float],
    verdicts: List[OrbitVerdict],
    note: Optional[str] = None,
    sr_grid: Optional[List[SrGridCell]] = None,
) -> CriterionReport:
    report = CriterionReport(
        criterion=criterion,
        system=sys.name,
        seed=ens.seed,
        thresholds=thresholds,
        per_orbit=verdicts,
        pass_fraction=_fraction(verdicts, "verdict"),
        weak_pass_fraction=_fraction(verdicts, "weak_verdict"),
        excluded_count=sum(v.error is not None for v in verdicts),
        sr_grid=sr_grid or [],
        note=note,
    )
    logger.info(
        "criterion evaluated",
        extra={
            "criterion": criterion,
            "system": sys.name,
            "seed": ens.seed,
            "pass_fraction": report.pass_fraction,
            "excluded": report.excluded_count,
        },
    )
    return report


def _nue_job(sys, x, cfg, rng, n, T, delta, warm):
    trace = cocycle_trace(sys, x, n, delta, cfg, period=T, warm=warm, seed=_job_seed(rng))
    return running_mean(trace.a / T)


def nue_T_test(
    ens: EnsembleSpec,
    c0: float,
    T: float,
    n: int,
    cfg: IntegratorConfig,
    delta: float = DEFAULT_DELTA,
    warm: float = DEFAULT_WARM,
    threads: Optional[int] = None,
) -> CriterionReport:
    """
    Non-uniform expansion of the time-T normal cocycle.

    For every ensemble member the running mean of log||(P^T|N^cu)^-1|| / T is
    recorded; the orbit passes when the mean of that curve over its final half
    is below -c0. The weak verdict uses the minimum over the final half instead.
    """
    if T <= 0:
        raise ConfigError("T must be positive", T=T)
    if n < 100:
        raise ConfigError("nue needs n >= 100 samples", n=n)
    sys = get_system(ens.system)
    if sys.d_cu < 2:
        raise UnsupportedDimensionError("the normal cocycle needs d_cu >= 2", d_cu=sys.d_cu)
    params = {"n": n, "T": T, "delta": delta, "warm": warm}
    outcomes = run_ensemble(ens, _nue_job, params, cfg, threads)
    verdicts = [
        _excluded(o) if o.error else _below_verdict(o, np.asarray(o.value), -c0) for o in outcomes
    ]
    criterion = "nue" if T == 1.0 else "nueT"
    return _report(criterion, sys, ens, {"c0": c0, "n": n, "T": T}, verdicts, note=PILOT_NOTE)


def nue_test(
    ens: EnsembleSpec,
    c0: float,
    n: int,
    cfg: IntegratorConfig,
    delta: float = DEFAULT_DELTA,
    warm: float = DEFAULT_WARM,
    threads: Optional[int] = None,
) -> CriterionReport:
    """Non-uniform expansion of the time-1 normal cocycle (nue_T_test with T = 1)."""
    return nue_T_test(ens, c0, 1.0, n, cfg, delta=delta, warm=warm, threads=threads)


def _sr_job(sys, x, cfg, rng, deltas, horizon):
    times, points = trajectory(sys, x, horizon, cfg)
    d = np.atleast_1d(dist_to_equilibria(points, sys.sing))
    k = int(np.argmin(d))
    if d[k] < EQUILIBRIUM_HIT:
        raise NearSingularityError(float(times[k]), float(d[k]), system=sys.name)
    out = {}
    for delta in deltas:
        integral = cumulative_trapezoid(-np.log(truncate(d, delta)), times, initial=0.0)
        running = integral[1:] / times[1:]
        half = tail_half(running)
        out[delta] = (float(half.mean()), float(half.min()), _thin(running))
    return out


def sr_test(
    ens: EnsembleSpec,
    delta: float,
    eps: float,
    T_horizon: float,
    cfg: IntegratorConfig,
    delta_list: Sequence[float] = (),
    eps_list: Sequence[float] = (),
    threads: Optional[int] = None,
) -> CriterionReport:
    """
    Slow recurrence to the equilibria.

    (1/T) int_0^T -log d_delta(phi_t x, Sing) dt is integrated by the trapezoid
    rule on the integrator grid; an orbit passes when the mean of the running
    average over its final half is below eps. The (delta, eps) sweep is reported
    as a grid of pass fractions.
    """
    deltas = sorted({float(delta), *map(float, delta_list)})
    if any(not 0.0 < v < 0.5 for v in deltas):
        raise ConfigError("delta must lie in (0, 1/2)", deltas=deltas)
    if T_horizon <= 0:
        raise ConfigError("the horizon must be positive", horizon=T_horizon)
    sys = get_system(ens.system)
    outcomes = run_ensemble(ens, _sr_job, {"deltas": deltas, "horizon": T_horizon}, cfg, threads)

    verdicts = []
    for o in outcomes:
        if o.error:
            verdicts.append(_excluded(o))
            continue
        value, low, curve = o.value[float(delta)]
        verdicts.append(
            OrbitVerdict(
                index=o.index,
                origin=o.origin,
                value=value,
                liminf=low,
                verdict=classify(value, eps, below=True),
                weak_verdict=classify(low, eps, below=True),
                running=curve.tolist(),
            )
        )

    grid = []
    valid = [o for o in outcomes if o.error is None]
    for d in deltas:
        for e in sorted({float(eps), *map(float, eps_list)}):
            passed = sum(classify(o.value[d][0], e, below=True) == "PASS" for o in valid)
            grid.append(SrGridCell(delta=d, eps=e, pass_fraction=passed / len(valid) if valid else 0.0))

    note = VACUOUS_SR if sys.sing.shape[0] == 0 else PILOT_NOTE
    thresholds = {"delta": delta, "eps": eps, "T": T_horizon}
    return _report("sr", sys, ens, thresholds, verdicts, note=note, sr_grid=grid)


def log_volume_rates(sys: SystemSpec, frame: TangentFrame, horizon: float, cfg: IntegratorConfig) -> np.ndarray:
    """(1/t) log|det D phi_t restricted to span(frame)| at the end of every unit time chunk."""
    n, rem = step_schedule(horizon, 1.0)
    chunks = [1.0] * n + ([rem] if rem > 0 else [])
    total, t = 0.0, 0.0
    rates = np.empty(len(chunks))
    for i, dt in enumerate(chunks):
        _, frame, logdet = tangent_advance(sys, frame, dt, cfg)
        total += logdet
        t += dt
        rates[i] = total / t
    return rates


def _plane_frames(ecu: np.ndarray, k: int, planes: int, rng: np.random.Generator) -> List[np.ndarray]:
    if k == ecu.shape[1]:
        return [ecu]
    out = []
    for _ in range(planes):
        C, _ = np.linalg.qr(rng.standard_normal((ecu.shape[1], k)))
        out.append(ecu @ C)
    return out


def _volume_job(sys, x, cfg, rng, horizon, k, planes, warm):
    base, ecu = center_unstable_basis(sys, x, warm, cfg, rng)
    curves = [
        log_volume_rates(sys, TangentFrame(base=base, frame=F), horizon, cfg)
        for F in _plane_frames(ecu, k, planes, rng)
    ]
    return np.min(np.stack(curves), axis=0)


def _growth_test(criterion, ens, threshold, horizon, k, planes, cfg, warm, threads, thresholds):
    if horizon <= 0:
        raise ConfigError("the horizon must be positive", horizon=horizon)
    sys = get_system(ens.system)
    if sys.d_cu < k:
        raise UnsupportedDimensionError(f"{criterion} needs d_cu >= {k}", d_cu=sys.d_cu)
    params = {"horizon": horizon, "k": k if k else sys.d_cu, "planes": planes, "warm": warm}
    outcomes = run_ensemble(ens, _volume_job, params, cfg, threads)
    verdicts = [
        _excluded(o) if o.error else _above_verdict(o, np.asarray(o.value), threshold) for o in outcomes
    ]
    return _report(criterion, sys, ens, thresholds, verdicts, note=PILOT_NOTE)


def ase_test(
    ens: EnsembleSpec,
    c_star: float,
    T_horizon: float,
    plane_samples: int,
    cfg: IntegratorConfig,
    warm: float = DEFAULT_WARM,
    threads: Optional[int] = None,
) -> CriterionReport:
    """
    Asymptotic sectional expansion of E^cu.

    Orthonormal 2-frames spanning sampled planes of E^cu are pushed in unit
    chunks; the orbit passes when the smallest log-area rate at the horizon is
    at least c_star. With d_cu = 2 the only plane is E^cu itself.
    """
    thresholds = {"c_star": c_star, "T": T_horizon, "plane_samples": plane_samples}
    return _growth_test("ase", ens, c_star, T_horizon, 2, plane_samples, cfg, warm, threads, thresholds)


def volume_expansion_test(
    ens: EnsembleSpec,
    theta: float,
    T_horizon: float,
    cfg: IntegratorConfig,
    warm: float = DEFAULT_WARM,
    threads: Optional[int] = None,
) -> CriterionReport:
    """Rate of log|det D phi_T|E^cu| against theta."""
    thresholds = {"theta": theta, "T": T_horizon}
    return _growth_test("volume", ens, theta, T_horizon, 0, 1, cfg, warm, threads, thresholds)


def det_identity_check(trace: CocycleTrace) -> float:
    """
    Residual of the determinant identity along a trace:

        mean log|det D phi|E^cu| + (log|G(x)| - log|G(f^n x)|) / n = mean log||P|N^cu||
    """
    if trace.d_cu != 2:
        raise UnsupportedDimensionError("the determinant identity is stated for d_cu = 2", d_cu=trace.d_cu)
    n = trace.n
    lhs = float(trace.logdet_cu.mean()) + (float(trace.logG[0]) - trace.logG_final) / n
    return abs(lhs - float(trace.logP.mean()))


def multiplicativity_check(
    sys: SystemSpec,
    x,
    s: float,
    t: float,
    cfg: IntegratorConfig,
    warm: float = MULTIPLICATIVITY_WARM,
    seed: int = DEFAULT_FRAME_SEED,
) -> float:
    """
    |log det(D phi_{t+s}|E) - log det(D phi_t|E) - log det(D phi_s|E')|.

    E is the center-unstable estimate at phi_warm(x); E' is an independent
    estimate at phi_{warm+t}(x) grown from another generic frame. The defect
    shrinks as both estimates align with E^cu, so its decay in t is only visible
    while the estimates are still misaligned: the default warm-up is a short
    MULTIPLICATIVITY_WARM, and a warm-up of DEFAULT_WARM returns a defect at
    roundoff level for every t.
    """
    base, ecu = center_unstable_basis(sys, x, warm, cfg, np.random.default_rng([seed, 1]))
    E = TangentFrame(base=base, frame=ecu)
    _, _, L_ts = tangent_advance(sys, E, t + s, cfg)
    _, _, L_t = tangent_advance(sys, E, t, cfg)

    V = center_unstable_frame(sys, sys.d_cu, np.random.default_rng([seed, 4]))
    later = tangent_flow(sys, x, V, warm + t, cfg, keep_r=False)
    _, _, L_s = tangent_advance(sys, TangentFrame(base=later.point, frame=later.Q), s, cfg)
    return abs(L_ts - L_t - L_s)


def _identity_job(sys, x, cfg, rng, n, delta, period, warm):
    trace = cocycle_trace(sys, x, n, delta, cfg, period=period, warm=warm, seed=_job_seed(rng))
    return det_identity_check(trace)


def identity_test(
    ens: EnsembleSpec,
    n: int,
    tol: float,
    cfg: IntegratorConfig,
    delta: float = DEFAULT_DELTA,
    period: float = 1.0,
    warm: float = DEFAULT_WARM,
    threads: Optional[int] = None,
) -> CriterionReport:
    """det_identity_check on a trace of every ensemble member; an orbit passes when the residual is below tol."""
    sys = get_system(ens.system)
    if sys.d_cu != 2:
        raise UnsupportedDimensionError("the determinant identity is stated for d_cu = 2", d_cu=sys.d_cu)
    params = {"n": n, "delta": delta, "period": period, "warm": warm}
    outcomes = run_ensemble(ens, _identity_job, params, cfg, threads)
    verdicts = []
    for o in outcomes:
        if o.error:
            verdicts.append(_excluded(o))
            continue
        verdict = "PASS" if o.value < tol else "FAIL"
        verdicts.append(
            OrbitVerdict(index=o.index, origin=o.origin, value=o.value, verdict=verdict, weak_verdict=verdict)
        )
    return _report("identity", sys, ens, {"n": n, "tol": tol, "T": period}, verdicts)
