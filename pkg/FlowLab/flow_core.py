from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from Common import (
    FlowEscapeError,
    FrameDegeneracyError,
    NearSingularityError,
    TruncatedDistanceDomainError,
    get_service_logger,
)
from Common.in_config import DEGENERACY_TOL

from .models import IntegratorConfig, SystemSpec, TangentFrame
from .schemas import EquilibriumInfo, SystemCheckReport
from .Utils import get_stepper

logger = get_service_logger(__name__)


class TangentFlow(NamedTuple):
    """
    Result of integrating a frame V along the orbit of x for time t.

    D phi_t(x) V = Q @ R, Q orthonormal, R upper triangular with positive diagonal.
    ``log_r`` accumulates log|R_ii| column by column, excluding the initial
    orthonormalization, so its sum is log|det(D phi_t restricted to span V)|.
    """

    point: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    log_r: np.ndarray
    trace_integral: float


def step_schedule(t: float, h: float) -> Tuple[int, float]:
    """Split [0, t] into full steps of size h plus a possibly empty last step."""
    if t < 0:
        raise ValueError("integration time must be nonnegative")
    ratio = t / h
    n = int(round(ratio))
    if abs(ratio - n) <= 1e-9 * max(1.0, ratio):
        return n, 0.0
    n = int(np.floor(ratio))
    return n, t - n * h


def _guard_box(sys: SystemSpec, x: np.ndarray, time: float) -> None:
    inside = np.atleast_1d(sys.in_box(x))
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        point = np.atleast_2d(x)[bad]
        context = {"system": sys.name}
        if x.ndim == 2:
            context["orbit"] = bad
        raise FlowEscapeError(time, point=point.tolist(), **context)


def dist_to_equilibria(points, equilibria) -> np.ndarray:
    """Distance from each point to the nearest listed equilibrium (inf when there are none)."""
    points = np.asarray(points, dtype=float)
    eq = np.asarray(equilibria, dtype=float)
    single = points.ndim == 1
    pts = np.atleast_2d(points)
    if eq.size == 0:
        out = np.full(pts.shape[0], np.inf)
    else:
        eq = eq.reshape(-1, pts.shape[1])
        out = np.min(np.linalg.norm(pts[:, None, :] - eq[None, :, :], axis=-1), axis=1)
    return out[0] if single else out


def truncate(d, delta: float) -> np.ndarray:
    """Piecewise truncation of raw distances d (inf maps to 1)."""
    d = np.asarray(d, dtype=float)
    finite = np.where(np.isinf(d), 1.0, d)
    middle = ((1.0 - delta) / delta) * finite + 2.0 * delta - 1.0
    return np.where(finite <= delta, finite, np.where(finite < 2.0 * delta, middle, 1.0))


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")


def truncated_distance(x, equilibria, delta: float) -> float:
    """
    Delta-truncated distance d_delta(x, S) from x to the equilibria S.

    Args:
        x: Point of R^m.
        equilibria: Points of S, shape (k, m); an empty list gives 1.
        delta (float): Truncation scale in (0, 1/2).

    Returns:
        float: d if d <= delta, ((1-delta)/delta) d + 2 delta - 1 if delta < d < 2 delta, else 1.

    Raises:
        TruncatedDistanceDomainError: If x is an equilibrium.
    """
    _check_delta(delta)
    d = float(dist_to_equilibria(np.asarray(x, dtype=float), equilibria))
    if d == 0.0:
        raise TruncatedDistanceDomainError("point coincides with an equilibrium", delta=delta)
    return float(truncate(d, delta))


def truncated_distances(points, equilibria, delta: float) -> np.ndarray:
    """Vectorized truncated_distance over an array of points."""
    _check_delta(delta)
    d = np.atleast_1d(dist_to_equilibria(np.atleast_2d(points), equilibria))
    if np.any(d == 0.0):
        raise TruncatedDistanceDomainError(
            "point coincides with an equilibrium", index=int(np.flatnonzero(d == 0.0)[0])
        )
    return truncate(d, delta)


def advance(sys: SystemSpec, x, t: float, cfg: IntegratorConfig) -> np.ndarray:
    """
    Flow map phi_t(x) by fixed-step integration.

    Accepts a single point (m,) or a batch (k, m); the batch is stepped together.

    Raises:
        FlowEscapeError: If the orbit leaves the bounding box; carries the exit time.
    """
    x = np.array(x, dtype=float)
    _guard_box(sys, x, 0.0)
    stepper = get_stepper(cfg.method)
    h = cfg.step
    n, rem = step_schedule(t, h)
    field = sys.vector_field
    for i in range(n):
        x = stepper.step(field, x, h)
        _guard_box(sys, x, (i + 1) * h)
    if rem > 0.0:
        x = stepper.step(field, x, rem)
        _guard_box(sys, x, t)
    return x


def trajectory(
    sys: SystemSpec, x, t: float, cfg: IntegratorConfig, sample_every: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Orbit samples on the integrator grid.

    Returns:
        times (np.ndarray): Sample times, starting at 0 and ending at t.
        points (np.ndarray): Shape (len(times), m) or (len(times), k, m) for a batch.
    """
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    x = np.array(x, dtype=float)
    _guard_box(sys, x, 0.0)
    stepper = get_stepper(cfg.method)
    h = cfg.step
    n, rem = step_schedule(t, h)
    field = sys.vector_field
    times = [0.0]
    points = [x.copy()]
    for i in range(n):
        x = stepper.step(field, x, h)
        _guard_box(sys, x, (i + 1) * h)
        if (i + 1) % sample_every == 0 or (i + 1 == n and rem == 0.0):
            times.append((i + 1) * h)
            points.append(x.copy())
    if rem > 0.0:
        x = stepper.step(field, x, rem)
        _guard_box(sys, x, t)
        times.append(t)
        points.append(x.copy())
    return np.asarray(times), np.asarray(points)


def qr_positive(V: np.ndarray, time: float) -> Tuple[np.ndarray, np.ndarray]:
    Q, R = np.linalg.qr(V)
    diag = np.diag(R)
    signs = np.where(diag < 0.0, -1.0, 1.0)
    Q = Q * signs
    R = signs[:, None] * R
    d = np.abs(diag)
    if not np.all(np.isfinite(R)) or np.min(d) <= DEGENERACY_TOL * max(1.0, float(np.max(d))):
        raise FrameDegeneracyError(time)
    return Q, R


def tangent_flow(
    sys: SystemSpec,
    x,
    V,
    t: float,
    cfg: IntegratorConfig,
    near_sing: Optional[float] = None,
    keep_r: bool = True,
) -> TangentFlow:
    """
    Integrate x together with the tangent frame V under the variational equation.

    The frame is re-orthonormalized by QR every ``cfg.renorm_every`` steps and at
    the end. With ``keep_r`` the product of the triangular factors is kept so that
    D phi_t V = Q R exactly; ``near_sing`` aborts when the orbit comes closer than
    that distance to an equilibrium.
    """
    x = np.array(x, dtype=float)
    V = np.array(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    _guard_box(sys, x, 0.0)
    stepper = get_stepper(cfg.method)
    h = cfg.step
    n, rem = step_schedule(t, h)
    field, jac = sys.vector_field, sys.jacobian
    sing = sys.sing if near_sing is not None else None

    def guard(point, time):
        _guard_box(sys, point, time)
        if sing is not None and sing.shape[0]:
            dist = float(dist_to_equilibria(point, sing))
            if dist < near_sing:
                raise NearSingularityError(time, dist, system=sys.name)

    guard(x, 0.0)
    Q, R_acc = qr_positive(V, 0.0)
    V = Q
    log_r = np.zeros(V.shape[1])
    trace_int = 0.0

    def renormalize(V, R_acc, log_r, time):
        Q, R = qr_positive(V, time)
        log_r = log_r + np.log(np.diag(R))
        if keep_r:
            R_acc = R @ R_acc
        return Q, R_acc, log_r

    since = 0
    for i in range(n):
        x, V, inc = stepper.step_tangent(field, jac, x, V, h)
        trace_int += inc
        guard(x, (i + 1) * h)
        since += 1
        if since == cfg.renorm_every:
            V, R_acc, log_r = renormalize(V, R_acc, log_r, (i + 1) * h)
            since = 0
    if rem > 0.0:
        x, V, inc = stepper.step_tangent(field, jac, x, V, rem)
        trace_int += inc
        guard(x, t)
        since += 1
    if since:
        V, R_acc, log_r = renormalize(V, R_acc, log_r, t)
    return TangentFlow(point=x, Q=V, R=R_acc, log_r=log_r, trace_integral=float(trace_int))


def tangent_advance(
    sys: SystemSpec, fr: TangentFrame, t: float, cfg: IntegratorConfig
) -> Tuple[np.ndarray, TangentFrame, float]:
    """
    Push a tangent frame by D phi_t.

    Returns:
        point (np.ndarray): phi_t(x).
        frame (TangentFrame): Orthonormal frame spanning D phi_t(x) . span(fr.frame).
        logdet (float): log|det(D phi_t restricted to the frame's span)|, summed from
            the R diagonals of every renormalization.
    """
    flow = tangent_flow(sys, fr.base, fr.frame, t, cfg, keep_r=False)
    return flow.point, TangentFrame(base=flow.point, frame=flow.Q), float(flow.log_r.sum())


def trace_integral(sys: SystemSpec, x, t: float, cfg: IntegratorConfig) -> float:
    """Integral of tr DG along the orbit of x over [0, t], by the same stepper as the frames."""
    x = np.array(x, dtype=float)
    _guard_box(sys, x, 0.0)
    stepper = get_stepper(cfg.method)
    h = cfg.step
    n, rem = step_schedule(t, h)
    empty = np.zeros((sys.dim, 0))
    total = 0.0
    for i in range(n):
        x, _, inc = stepper.step_tangent(sys.vector_field, sys.jacobian, x, empty, h)
        total += inc
        _guard_box(sys, x, (i + 1) * h)
    if rem > 0.0:
        x, _, inc = stepper.step_tangent(sys.vector_field, sys.jacobian, x, empty, rem)
        total += inc
        _guard_box(sys, x, t)
    return float(total)


def equilibrium_profile(sys: SystemSpec) -> List[EquilibriumInfo]:
    """
    Eigen-data of DG at each listed equilibrium.

    An equilibrium is Lorenz-like when the spectrum is real with exactly one
    positive eigenvalue lambda_u, the weakest stable eigenvalue lambda_s has a
    stronger one below it, and lambda_u + lambda_s > 0; contracting when the same
    pattern holds with lambda_u + lambda_s < 0.
    """
    profile = []
    for sigma in sys.sing:
        eig = np.linalg.eigvals(sys.jac(sigma))
        eig = eig[np.lexsort((eig.imag, eig.real))]
        hyperbolic = bool(np.all(np.abs(eig.real) > 1e-9))
        real = bool(np.all(np.abs(eig.imag) < 1e-12))
        lorenz_like = contracting = False
        if real and hyperbolic:
            re = eig.real
            positive = re[re > 0]
            negative = re[re < 0]
            if positive.size == 1 and negative.size >= 2:
                lam_u, lam_s = positive[0], negative[-1]
                lorenz_like = bool(lam_u + lam_s > 0)
                contracting = bool(lam_u + lam_s < 0)
        profile.append(
            EquilibriumInfo(
                point=sigma.tolist(),
                eigenvalues_real=eig.real.tolist(),
                eigenvalues_imag=eig.imag.tolist(),
                hyperbolic=hyperbolic,
                lorenz_like=lorenz_like,
                contracting=contracting,
            )
        )
    return profile


def verify_system(sys: SystemSpec, n_samples: int = 50, seed: int = 0) -> SystemCheckReport:
    """
    Check the SystemSpec invariants on random samples.

    Equilibria must satisfy |G| < 1e-10, sampled pairs in the bounding box must
    respect the Lipschitz bound, and DG must match central differences of G to
    relative error < 1e-5 at points of the trapping box.
    """
    rng = np.random.default_rng(seed)
    m = sys.dim
    eq_residual = 0.0
    for sigma in sys.sing:
        eq_residual = max(eq_residual, float(np.linalg.norm(sys.eval(sigma))))

    xs = rng.uniform(sys.box_lo, sys.box_hi, size=(n_samples, m))
    ys = rng.uniform(sys.box_lo, sys.box_hi, size=(n_samples, m))
    diff = np.linalg.norm(sys.eval(xs) - sys.eval(ys), axis=1)
    gap = np.linalg.norm(xs - ys, axis=1)
    lip_ratio = float(np.max(diff / (sys.lip_bound * gap)))

    jac_error = 0.0
    for p in rng.uniform(sys.trap_lo, sys.trap_hi, size=(n_samples, m)):
        h = 1e-5 * max(1.0, float(np.linalg.norm(p)))
        fd = np.empty((m, m))
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            fd[:, j] = (sys.eval(p + e) - sys.eval(p - e)) / (2.0 * h)
        exact = sys.jac(p)
        scale = max(float(np.linalg.norm(exact)), 1e-12)
        jac_error = max(jac_error, float(np.linalg.norm(fd - exact)) / scale)

    ok = eq_residual < 1e-10 and lip_ratio <= 1.0 + 1e-6 and jac_error < 1e-5
    if not ok:
        logger.warning(
            "system check failed",
            extra={"system": sys.name, "eq_residual": eq_residual, "lip_ratio": lip_ratio, "jac_error": jac_error},
        )
    return SystemCheckReport(
        system=sys.name,
        equilibrium_residual=eq_residual,
        lipschitz_ratio=lip_ratio,
        jacobian_rel_error=jac_error,
        ok=ok,
    )
