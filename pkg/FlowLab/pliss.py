from typing import List, Sequence

import numpy as np

from Common import PlissInputError, PlissPreconditionError, get_service_logger

from .flow_core import truncate
from .models import (
    CocycleTrace,
    FlowPlissResult,
    HyperbolicTimeCheck,
    HyperbolicTimeConfig,
    HyperbolicTimes,
    PlissConfig,
    PlissResult,
)

logger = get_service_logger(__name__)

NUE_SUM_UNMET = "NUE sum hypothesis unmet"


def pliss_times(a: Sequence[float], cfg: PlissConfig) -> PlissResult:
    """
    All Pliss times of the sequence a.

    n (1 <= n <= N) is returned iff sum_{j=k+1}^{n} a_j >= c1 (n - k) for every
    0 <= k < n, i.e. iff the partial sum S_n of (a_j - c1) is at least every
    earlier partial sum. One pass with a running maximum.

    Args:
        a (Sequence[float]): a_1..a_N, each at most cfg.A.
        cfg (PlissConfig): Constants A >= c2 > c1.

    Returns:
        PlissResult: Complete sorted index set, its size and the bound zeta N.

    Raises:
        PlissInputError: If some a_j > A; names the first such j (1-based).
    """
    a = np.asarray(a, dtype=float)
    N = int(a.size)
    over = np.flatnonzero(a > cfg.A)
    if over.size:
        j = int(over[0])
        raise PlissInputError(j + 1, float(a[j]), cfg.A)

    S = np.concatenate([[0.0], np.cumsum(a - cfg.c1)])
    best_before = np.maximum.accumulate(S)[:-1]
    indices = (np.flatnonzero(S[1:] >= best_before) + 1).tolist()
    return PlissResult(
        indices=indices,
        ell=len(indices),
        density_bound=cfg.zeta() * N,
        N=N,
        hypothesis_met=bool(a.sum() >= cfg.c2 * N),
    )


def pliss_oracle(a: Sequence[float], c1: float) -> List[int]:
    """Exhaustive O(N^2) check of the Pliss inequality for every candidate index."""
    a = [float(v) for v in a]
    out = []
    for n in range(1, len(a) + 1):
        window = 0.0
        ok = True
        for k in range(n - 1, -1, -1):
            window += a[k]
            if window < c1 * (n - k):
                ok = False
                break
        if ok:
            out.append(n)
    return out


def _check_flow_input(H: np.ndarray, spacing: float, c: float, eps: float, A: float) -> None:
    if H.ndim != 1 or H.size < 2:
        raise PlissPreconditionError("H must be sampled at two or more grid times")
    if spacing <= 0 or eps <= 0:
        raise PlissPreconditionError("spacing and eps must be positive")
    T = spacing * (H.size - 1)
    if abs(H[0]) > 1e-12:
        raise PlissPreconditionError("H(0) must be 0", H0=float(H[0]))
    if not H[-1] < c * T:
        raise PlissPreconditionError("H(T) must be below cT", HT=float(H[-1]), cT=c * T)
    slopes = np.diff(H) / spacing
    if not slopes.min() > A:
        raise PlissPreconditionError("slopes of H must exceed A", min_slope=float(slopes.min()), A=A)
    if not c + eps > slopes.min():
        raise PlissPreconditionError("c + eps must exceed inf H'", min_slope=float(slopes.min()))


def flow_pliss(H: Sequence[float], spacing: float, c: float, eps: float, A: float) -> FlowPlissResult:
    """
    Pliss lemma for a sampled function H on [0, T].

    The cell starting at grid time tau is marked when H(s) - H(tau) < (c + eps)(s - tau)
    for every later grid time s, i.e. when K = H - (c + eps) t at tau strictly
    exceeds K at all later grid times. Backward scan with a suffix maximum.
    The marked measure is at least theta T with theta = eps / (c + eps - A).
    """
    H = np.asarray(H, dtype=float)
    _check_flow_input(H, spacing, c, eps, A)
    M = H.size - 1
    t = spacing * np.arange(M + 1)
    K = H - (c + eps) * t
    later = np.maximum.accumulate(K[::-1])[::-1]
    mask = K[:M] > later[1:]
    return FlowPlissResult(
        set_mask=mask,
        measure=float(mask.sum()) * spacing,
        theta=eps / (c + eps - A),
        T=spacing * M,
        spacing=spacing,
    )


def flow_pliss_oracle(H: Sequence[float], spacing: float, c: float, eps: float) -> np.ndarray:
    """Double-loop grid check of the flow Pliss inequality."""
    H = np.asarray(H, dtype=float)
    M = H.size - 1
    mask = np.zeros(M, dtype=bool)
    for i in range(M):
        mask[i] = all(
            H[j] - H[i] < (c + eps) * (spacing * j - spacing * i) for j in range(i + 1, M + 1)
        )
    return mask


def hyperbolic_times(trace: CocycleTrace, cfg: HyperbolicTimeConfig) -> HyperbolicTimes:
    """
    Hyperbolic times of a cocycle trace with slow-recurrence control.

    n qualifies when, for all 0 <= k < n,
        sum_{j=k}^{n-1} a_j <= -c0 (n - k) / 4
    (Pliss times of b = -a with c1 = c0/4, c2 = c0/2), and for all 0 <= j < n,
        d_delta0(f^j x) > exp(-c0 (n - j) / 16 - L).
    Each returned index carries both margins and the lead-time check
    d_delta0(f^j x) > exp(-c0 (n - j) / 8) for n - j >= kappa_min.
    """
    N = trace.n
    c0, L = cfg.c0, cfg.lip_bound
    b = -trace.a
    if b.sum() < c0 * N / 2:
        logger.info("no hyperbolic times", extra={"system": trace.system, "reason": NUE_SUM_UNMET})
        return HyperbolicTimes(N=N, c0=c0, indices=[], checks=[], density=0.0, reason=NUE_SUM_UNMET)

    c1, c2 = c0 / 4.0, c0 / 2.0
    A = max(L, c2, float(b.max()))
    pliss = pliss_times(b, PlissConfig(A=A, c1=c1, c2=c2))

    S = np.concatenate([[0.0], np.cumsum(b - c1)])
    best_before = np.maximum.accumulate(S)[:-1]

    logd = np.log(truncate(trace.dist_sing, cfg.delta0))
    j = np.arange(N)
    sr_run = np.minimum.accumulate(logd - c0 * j / 16.0)
    lead_run = np.minimum.accumulate(logd - c0 * j / 8.0)

    indices, checks = [], []
    for n in pliss.indices:
        hyp_margin = float(S[n] - best_before[n - 1])
        sr_margin = float(sr_run[n - 1] + c0 * n / 16.0 + L)
        if not sr_margin > 0:
            continue
        last = n - cfg.kappa_min
        lead_ok = True if last < 0 else bool(lead_run[last] + c0 * n / 8.0 > 0)
        indices.append(n)
        checks.append(
            HyperbolicTimeCheck(index=n, hyptimex_margin=hyp_margin, srtimex_margin=sr_margin, lead_ok=lead_ok)
        )
    return HyperbolicTimes(N=N, c0=c0, indices=indices, checks=checks, density=len(indices) / N if N else 0.0)


def hyperbolic_times_oracle(trace: CocycleTrace, cfg: HyperbolicTimeConfig, slack: float = 0.0) -> List[int]:
    """
    O(N^2) direct check of both hyperbolic-time inequalities.

    ``slack`` loosens every inequality by that amount (used to absorb rounding
    when cross-checking float traces).
    """
    N = trace.n
    c0, L = cfg.c0, cfg.lip_bound
    a = [float(v) for v in trace.a]
    if -sum(a) < c0 * N / 2:
        return []
    logd = np.log(truncate(trace.dist_sing, cfg.delta0))
    out = []
    for n in range(1, N + 1):
        window = 0.0
        ok = True
        for k in range(n - 1, -1, -1):
            window += a[k]
            if window > -c0 * (n - k) / 4.0 + slack:
                ok = False
                break
        if ok:
            ok = all(logd[j] > -c0 * (n - j) / 16.0 - L - slack for j in range(n))
        if ok:
            out.append(n)
    return out
