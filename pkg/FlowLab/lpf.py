from typing import Optional, Tuple

import numpy as np
from scipy.linalg import null_space, subspace_angles

from Common import (
    DEFAULT_WARM,
    NEAR_SINGULARITY,
    FrameDegeneracyError,
    InconsistentSplittingError,
    NearSingularityError,
    NoDominationError,
    NumericalError,
    SingularityError,
    UnsupportedDimensionError,
    get_service_logger,
)
from Common.in_config import (
    DEFAULT_FRAME_SEED,
    FLOW_IN_CENTER_TOL,
    NO_DOMINATION_GAP,
    ORTHOGONAL_G_TOL,
    SPLITTING_CLEARANCE,
)

from .flow_core import dist_to_equilibria, qr_positive, tangent_flow, trajectory, truncated_distances
from .models import CocycleTrace, IntegratorConfig, NormalSection, SplittingEstimate, SystemSpec
from .schemas import ConeReport, DominationReport
from .Utils import get_stepper

logger = get_service_logger(__name__)


def _unit(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if not norm > 0:
        raise SingularityError("vector field vanishes; the flow direction is undefined")
    return g / norm


def project_normal(G_x, v) -> np.ndarray:
    """
    Orthogonal projection O_x onto the normal space G(x)^perp.

    Accepts a vector or a matrix whose columns are projected.
    """
    g = np.asarray(G_x, dtype=float)
    v = np.asarray(v, dtype=float)
    norm2 = float(g @ g)
    if not norm2 > 0:
        raise SingularityError("vector field vanishes; no normal space")
    if v.ndim == 1:
        return v - ((v @ g) / norm2) * g
    return v - np.outer(g, g @ v) / norm2


def lpf_step(sys: SystemSpec, x, t: float, v, cfg: IntegratorConfig) -> np.ndarray:
    """
    Linear Poincare flow P^t_x v = O_{phi_t x}(D phi_t(x) v).

    Raises:
        NearSingularityError: The orbit comes within 1e-8 of an equilibrium.
        ValueError: v is not normal to G(x).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    gh = _unit(sys.eval(x))
    if abs(float(v @ gh)) > 1e-8 * max(1.0, float(np.linalg.norm(v))):
        raise ValueError("v must be normal to G(x)")
    flow = tangent_flow(sys, x, v, t, cfg, near_sing=NEAR_SINGULARITY)
    pushed = (flow.Q @ flow.R)[:, 0]
    return project_normal(sys.eval(flow.point), pushed)


def center_unstable_frame(sys: SystemSpec, k: int, rng: np.random.Generator) -> np.ndarray:
    """
    Starting k-frame for the forward push toward E^cu.

    A generic Gaussian frame, unless the system declares an invariant E^cu, in
    which case its first k declared columns are used. The flow direction is not
    planted, so it lies in the pushed span only if the push has converged.
    """
    if sys.ecu_frame is not None:
        return np.array(sys.ecu_frame[:, :k], dtype=float)
    return rng.standard_normal((sys.dim, k))


def center_unstable_basis(
    sys: SystemSpec, x, warm: float, cfg: IntegratorConfig, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Push a generic d_cu-frame for ``warm``; returns phi_warm(x) and an orthonormal basis of E^cu there."""
    V = center_unstable_frame(sys, sys.d_cu, rng)
    flow = tangent_flow(sys, x, V, warm, cfg, near_sing=SPLITTING_CLEARANCE, keep_r=False)
    return flow.point, flow.Q


def _check_clearance(sys: SystemSpec, points: np.ndarray, times: np.ndarray, clearance: float) -> None:
    if sys.sing.shape[0] == 0:
        return
    d = np.atleast_1d(dist_to_equilibria(points, sys.sing))
    k = int(np.argmin(d))
    if d[k] < clearance:
        raise NearSingularityError(float(times[k]), float(d[k]), system=sys.name)


def stable_basis(
    sys: SystemSpec, b, warm_bwd: float, cfg: IntegratorConfig, seed: int = DEFAULT_FRAME_SEED
) -> np.ndarray:
    """
    Orthonormal basis of E^s at b.

    A generic d_cu-frame is pushed by the adjoint cocycle, from phi_{warm_bwd}(b)
    back to b, along the stored forward orbit. Its span converges to the
    orthogonal complement of E^s_b, which is returned.
    """
    m, d_cu = sys.dim, sys.d_cu
    h = cfg.step
    n = max(1, int(round(warm_bwd / h)))
    fine = IntegratorConfig(step=0.5 * h, renorm_every=cfg.renorm_every, method=cfg.method)
    times, points = trajectory(sys, b, n * h, fine)
    _check_clearance(sys, points, times, SPLITTING_CLEARANCE)

    stepper = get_stepper(cfg.method)
    rng = np.random.default_rng([seed, 2])
    Y, _ = np.linalg.qr(rng.standard_normal((m, d_cu)))
    J_next = sys.jac(points[2 * n]).T
    for k in range(n):
        s = 2 * (n - k)
        J0, Jm, J1 = J_next, sys.jac(points[s - 1]).T, sys.jac(points[s - 2]).T
        Y = stepper.step_linear(J0, Jm, J1, Y, h)
        J_next = J1
        if (k + 1) % cfg.renorm_every == 0:
            Y, _ = qr_positive(Y, float(times[s - 2]))
    Y, _ = qr_positive(Y, 0.0)
    return null_space(Y.T)


def _assemble(sys: SystemSpec, base: np.ndarray, es: np.ndarray, ecu: np.ndarray) -> SplittingEstimate:
    angle_gap = float(np.min(subspace_angles(es, ecu)))
    if angle_gap < NO_DOMINATION_GAP:
        raise NoDominationError(angle_gap, base=base.tolist(), system=sys.name)
    g = sys.eval(base)
    residual = 0.0
    if np.linalg.norm(g) > 0:
        gh = g / np.linalg.norm(g)
        residual = float(np.linalg.norm(gh - ecu @ (ecu.T @ gh)))
    if residual > FLOW_IN_CENTER_TOL:
        raise InconsistentSplittingError(
            "flow direction outside the center-unstable estimate",
            residual=residual,
            base=base.tolist(),
            system=sys.name,
        )
    return SplittingEstimate(base=base, es_basis=es, ecu_basis=ecu, angle_gap=angle_gap, residual=residual)


def estimate_splitting(
    sys: SystemSpec,
    x,
    warm_fwd: float = DEFAULT_WARM,
    warm_bwd: float = DEFAULT_WARM,
    cfg: Optional[IntegratorConfig] = None,
    seed: int = DEFAULT_FRAME_SEED,
) -> SplittingEstimate:
    """
    Estimate the dominated splitting E^s + E^cu.

    E^cu is the image under D phi_{warm_fwd} of a generic d_cu-frame, or of the
    declared one (see center_unstable_frame); the estimate is attached to the
    point reached, base = phi_{warm_fwd}(x). E^s at base comes from adjoint
    pushing over the next warm_bwd time units (see stable_basis).

    Args:
        sys (SystemSpec): The system; needs d_s >= 1.
        x: Starting point.
        warm_fwd (float): Forward warm-up for E^cu.
        warm_bwd (float): Adjoint warm-up for E^s.
        cfg (IntegratorConfig): Integrator settings.
        seed (int): Seed of the generic frames.

    Returns:
        SplittingEstimate: Orthonormal bases at the base point, angle gap and flow residual.

    Raises:
        UnsupportedDimensionError: If d_s < 1.
        NoDominationError: If the smallest principal angle is below 1e-6.
        InconsistentSplittingError: If G(base) is farther than 1e-3 from the E^cu estimate,
            typically because warm_fwd was too short for the push to converge.
    """
    cfg = cfg or IntegratorConfig()
    if sys.d_s < 1:
        raise UnsupportedDimensionError("splitting estimation needs d_s >= 1", d_s=sys.d_s, system=sys.name)
    base, ecu = center_unstable_basis(sys, x, warm_fwd, cfg, np.random.default_rng([seed, 1]))
    es = stable_basis(sys, base, warm_bwd, cfg, seed)
    logger.debug("splitting estimated", extra={"system": sys.name, "warm_fwd": warm_fwd, "warm_bwd": warm_bwd})
    return _assemble(sys, base, es, ecu)


def _normal_complement(basis: np.ndarray, gh: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span(basis) intersected with gh^perp; basis is orthonormal."""
    c = basis.T @ gh
    inside = float(np.linalg.norm(c))
    if inside < ORTHOGONAL_G_TOL:
        raise InconsistentSplittingError("flow direction nearly orthogonal to E^cu", cosine=inside)
    residual = float(np.linalg.norm(gh - basis @ c))
    if residual > FLOW_IN_CENTER_TOL:
        raise InconsistentSplittingError("flow direction outside E^cu", residual=residual)
    return basis @ null_space(c[None, :])


def normal_cu(est: SplittingEstimate, G_x) -> NormalSection:
    """N^cu = E^cu intersected with G^perp, as an orthonormal m x (d_cu - 1) basis."""
    return NormalSection(base=est.base, ncu_basis=_normal_complement(est.ecu_basis, _unit(G_x)))


def _normal_from_frame(frame: np.ndarray, gh: np.ndarray, d_cu: int) -> np.ndarray:
    P = project_normal(gh, np.asarray(frame, dtype=float).reshape(gh.size, -1))
    U, s, _ = np.linalg.svd(P, full_matrices=False)
    if s.size < d_cu - 1 or s[d_cu - 2] <= 1e-12:
        raise InconsistentSplittingError("frame has no (d_cu - 1)-dimensional normal part")
    return U[:, : d_cu - 1]


def cocycle_trace(
    sys: SystemSpec,
    x,
    n: int,
    delta: float,
    cfg: IntegratorConfig,
    period: float = 1.0,
    warm: float = DEFAULT_WARM,
    frame: Optional[np.ndarray] = None,
    seed: int = DEFAULT_FRAME_SEED,
) -> CocycleTrace:
    """
    Sample the normal cocycle along f^i(base), f the time-``period`` map.

    Without ``frame`` the splitting is estimated first and the trace starts at its
    base point; with ``frame`` (a tangent frame of E^cu at x) it starts at x. At
    every step the frame [G/|G|, N^cu] is pushed once, the image of N^cu is
    expressed in the next normal basis, and the norms of that square matrix and of
    its inverse are logged, together with log|det D phi|E^cu|, log|G| and the
    truncated distance to the equilibria.

    Raises:
        UnsupportedDimensionError: If d_cu < 2.
        NumericalError: Splitting, escape or singularity errors, with the failing ``index``.
    """
    if sys.d_cu < 2:
        raise UnsupportedDimensionError("the normal cocycle needs d_cu >= 2", d_cu=sys.d_cu)
    if n < 1:
        raise ValueError("trace length must be >= 1")
    x = np.asarray(x, dtype=float)
    if frame is None:
        est = estimate_splitting(sys, x, warm, warm, cfg, seed)
        base = est.base
        N = normal_cu(est, sys.eval(base)).ncu_basis
    else:
        base = x.copy()
        N = _normal_from_frame(frame, _unit(sys.eval(base)), sys.d_cu)

    m = sys.dim
    a = np.empty(n)
    logP = np.empty(n)
    logG = np.empty(n)
    logdet = np.empty(n)
    points = np.empty((n + 1, m))
    points[0] = base
    p = base
    g = sys.eval(p)
    for i in range(n):
        try:
            gnorm = float(np.linalg.norm(g))
            gh = _unit(g)
            V0 = np.column_stack([gh, N])
            flow = tangent_flow(sys, p, V0, period, cfg, near_sing=NEAR_SINGULARITY)
            g_next = sys.eval(flow.point)
            N_next = _normal_complement(flow.Q, _unit(g_next))
            M = N_next.T @ flow.Q @ flow.R[:, 1:]
            sv = np.linalg.svd(M, compute_uv=False)
            if not sv[-1] > 0:
                raise FrameDegeneracyError(i * period)
        except NumericalError as exc:
            exc.context.setdefault("index", i)
            raise
        a[i] = -np.log(sv[-1])
        logP[i] = np.log(sv[0])
        logdet[i] = float(flow.log_r.sum())
        logG[i] = np.log(gnorm)
        p, g, N = flow.point, g_next, N_next
        points[i + 1] = p

    dist_sing = np.atleast_1d(dist_to_equilibria(points[:n], sys.sing))
    dist_trunc = truncated_distances(points[:n], sys.sing, delta)
    logger.debug("cocycle trace", extra={"system": sys.name, "n": n, "period": period})
    return CocycleTrace(
        system=sys.name,
        origin=x,
        base=base,
        delta=delta,
        period=period,
        d_cu=sys.d_cu,
        lip_bound=sys.lip_bound,
        a=a,
        logP=logP,
        logG=logG,
        logdet_cu=logdet,
        dist_trunc=dist_trunc,
        dist_sing=dist_sing,
        points=points,
        logG_final=float(np.log(np.linalg.norm(g))),
    )


def _cone_coefficients(rng: np.random.Generator, d_s: int, d_cu: int, a_width: float, n_samples: int) -> np.ndarray:
    """Coordinates (alpha; beta) in the basis [E^s, E^cu] of vectors with |alpha| = a |beta| = a."""
    cols = []
    for i in range(d_s):
        for j in range(d_cu):
            c = np.zeros(d_s + d_cu)
            c[i] = a_width
            c[d_s + j] = 1.0
            cols.append(c)
    while len(cols) < n_samples:
        us = rng.standard_normal(d_s)
        uc = rng.standard_normal(d_cu)
        cols.append(np.concatenate([a_width * us / np.linalg.norm(us), uc / np.linalg.norm(uc)]))
    return np.column_stack(cols[:n_samples])


def cone_invariance_check(
    sys: SystemSpec,
    x,
    a_width: float,
    t: float,
    n_samples: int,
    cfg: IntegratorConfig,
    warm: float = DEFAULT_WARM,
    seed: int = DEFAULT_FRAME_SEED,
) -> ConeReport:
    """
    Push vectors on the boundary of the cone C^cu_a and measure their stable/central ratio.

    The pushed vectors are decomposed against the splitting at phi_t(base): E^cu
    transported by D phi_t and E^s re-estimated there. PASS when the largest ratio
    is below the cone width.
    """
    est = estimate_splitting(sys, x, warm, warm, cfg, seed)
    d_s = est.d_s
    B = np.column_stack([est.es_basis, est.ecu_basis])
    coeffs = _cone_coefficients(np.random.default_rng([seed, 3]), d_s, est.d_cu, a_width, n_samples)

    flow = tangent_flow(sys, est.base, B, t, cfg, near_sing=NEAR_SINGULARITY)
    DB = flow.Q @ flow.R
    pushed = DB @ coeffs
    es_t = stable_basis(sys, flow.point, warm, cfg, seed)
    ecu_t, _ = np.linalg.qr(DB[:, d_s:])
    parts = np.linalg.solve(np.column_stack([es_t, ecu_t]), pushed)
    ratios = np.linalg.norm(parts[:d_s], axis=0) / np.linalg.norm(parts[d_s:], axis=0)
    max_ratio = float(np.max(ratios))

    note = None
    if max_ratio >= a_width * (1.0 - 1e-9):
        note = "no domination: the cone width is not contracted"
    return ConeReport(
        base=est.base.tolist(),
        a_width=a_width,
        t=t,
        n_samples=n_samples,
        max_ratio=max_ratio,
        passed=max_ratio < a_width,
        note=note,
    )


def domination_check(
    sys: SystemSpec,
    x,
    t: float,
    cfg: IntegratorConfig,
    warm: float = DEFAULT_WARM,
    seed: int = DEFAULT_FRAME_SEED,
) -> DominationReport:
    """
    Rates of ||D phi_t|E^s|| ||D phi_-t|E^cu|| and ||D phi_t|E^s|| as lambda^t estimates.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    est = estimate_splitting(sys, x, warm, warm, cfg, seed)
    d_s = est.d_s
    B = np.column_stack([est.es_basis, est.ecu_basis])
    flow = tangent_flow(sys, est.base, B, t, cfg, near_sing=NEAR_SINGULARITY)
    DB = flow.Q @ flow.R
    s_norm = float(np.linalg.svd(DB[:, :d_s], compute_uv=False)[0])
    cu_min = float(np.linalg.svd(DB[:, d_s:], compute_uv=False)[-1])
    lambda_s = s_norm ** (1.0 / t)
    lambda_dom = (s_norm / cu_min) ** (1.0 / t)
    return DominationReport(
        base=est.base.tolist(),
        t=t,
        lambda_dom=lambda_dom,
        lambda_s=lambda_s,
        dominated=lambda_dom < 1.0,
        contracting=lambda_s < 1.0,
    )


def lyapunov_spectrum(sys: SystemSpec, x, T: float, cfg: IntegratorConfig) -> np.ndarray:
    """Finite-time Lyapunov exponents of the full tangent flow, largest first."""
    flow = tangent_flow(sys, x, np.eye(sys.dim), T, cfg, keep_r=False)
    return np.sort(flow.log_r / T)[::-1]
