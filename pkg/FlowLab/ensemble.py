import os
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from Common import ConfigError, NumericalError, get_service_logger

from .flow_core import advance
from .models import EnsembleSpec, IntegratorConfig, SystemSpec
from .systems import get_system

logger = get_service_logger(__name__)

# job(sys, x, cfg, rng, **params) -> value
OrbitJob = Callable[..., Any]


class OrbitOutcome(BaseModel):
    """Result of one orbit job; ``error`` is set instead of ``value`` when the orbit was excluded."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    origin: List[float]
    value: Any = None
    error: Optional[Dict[str, Any]] = None


def sample_initial_conditions(sys: SystemSpec, count: int, seed: int) -> np.ndarray:
    """
    Uniform samples of the trapping region.

    Points are drawn uniformly in the trapping box and kept when the trap
    predicate accepts them. Identical (count, seed) give identical samples.
    """
    rng = np.random.default_rng(seed)
    kept: List[np.ndarray] = []
    drawn = 0
    limit = 1000 * count + 10000
    while len(kept) < count:
        batch = rng.uniform(sys.trap_lo, sys.trap_hi, size=(max(64, 2 * (count - len(kept))), sys.dim))
        drawn += batch.shape[0]
        for p in batch:
            if sys.in_trap(p):
                kept.append(p)
                if len(kept) == count:
                    break
        if drawn > limit and len(kept) < count:
            raise ConfigError("trapping region too small for rejection sampling", system=sys.name)
    return np.array(kept)


def sample_ensemble(sys: SystemSpec, ens: EnsembleSpec, cfg: IntegratorConfig) -> np.ndarray:
    """Initial conditions of an ensemble, transported by the burn-in."""
    origins = sample_initial_conditions(sys, ens.count, ens.seed)
    if ens.burn_in <= 0:
        return origins
    return np.array([advance(sys, x, ens.burn_in, cfg) for x in origins])


@lru_cache(maxsize=32)
def _cached_system(source: str) -> SystemSpec:
    return get_system(source)


def _resolve(source: Any) -> SystemSpec:
    if isinstance(source, str):
        return _cached_system(source)
    return get_system(source)


def _run_orbit(task) -> OrbitOutcome:
    source, index, origin, burn_in, cfg, job, params, seed_seq = task
    sys = _resolve(source)
    try:
        x = advance(sys, origin, burn_in, cfg) if burn_in > 0 else np.asarray(origin, dtype=float)
        value = job(sys, x, cfg, np.random.default_rng(seed_seq), **params)
        return OrbitOutcome(index=index, origin=list(map(float, origin)), value=value)
    except NumericalError as exc:
        logger.warning("orbit excluded", extra={"orbit": index, "system": sys.name, "error": exc.to_dict()})
        return OrbitOutcome(index=index, origin=list(map(float, origin)), error=exc.to_dict())


def map_orbits(
    source: Any,
    starts: Sequence[Sequence[float]],
    job: OrbitJob,
    params: Dict[str, Any],
    cfg: IntegratorConfig,
    seed: int,
    threads: Optional[int] = None,
    burn_in: float = 0.0,
) -> List[OrbitOutcome]:
    """
    Run ``job`` on every start point, in a process pool or inline.

    Each orbit gets its own child of SeedSequence(seed); outcomes come back in
    input order, so results do not depend on the number of workers. Numerical
    errors exclude the orbit; anything else propagates.
    """
    threads = threads or os.cpu_count() or 1
    children = np.random.SeedSequence(seed).spawn(len(starts))
    tasks = [
        (source, i, np.asarray(x, dtype=float), burn_in, cfg, job, params, children[i])
        for i, x in enumerate(starts)
    ]
    if threads == 1 or len(tasks) <= 1:
        return [_run_orbit(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(_run_orbit, tasks))


def run_ensemble(
    ens: EnsembleSpec,
    job: OrbitJob,
    params: Dict[str, Any],
    cfg: IntegratorConfig,
    threads: Optional[int] = None,
) -> List[OrbitOutcome]:
    sys = _resolve(ens.system)
    origins = sample_initial_conditions(sys, ens.count, ens.seed)
    logger.info(
        "ensemble started",
        extra={"system": sys.name, "count": ens.count, "seed": ens.seed, "burn_in": ens.burn_in},
    )
    outcomes = map_orbits(ens.system, origins, job, params, cfg, ens.seed, threads, ens.burn_in)
    excluded = sum(o.error is not None for o in outcomes)
    logger.info("ensemble finished", extra={"system": sys.name, "excluded": excluded})
    return outcomes
