import functools
import json
from pathlib import Path
from typing import List, Optional

import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from typing_extensions import Annotated

from Common import (
    EXIT_CRITERION_FAIL,
    EXIT_NUMERICAL,
    EXIT_USAGE,
    SERVICE_NAME,
    ConfigError,
    EmptyMeasureError,
    FlowLabError,
    ProvenanceHeader,
    config_hash,
    get_service_logger,
    set_log_level,
    write_csv,
    write_json,
)

from .criteria import (
    ase_test,
    identity_test,
    nue_T_test,
    nue_test,
    sr_test,
    volume_expansion_test,
)
from .ensemble import sample_initial_conditions
from .flow_core import advance, equilibrium_profile, trajectory
from .lpf import cocycle_trace, cone_invariance_check, domination_check, estimate_splitting
from .models import EnsembleSpec, HyperbolicTimeConfig
from .pliss import hyperbolic_times
from .schemas import CriterionReport, RunConfig
from .srb import (
    basin_coverage,
    cluster_measures,
    coordinate_panel,
    disk_pushforward,
    marginal,
    orbit_statistics,
    sample_disk,
    trap_grid,
)
from .systems import get_system

logger = get_service_logger(SERVICE_NAME)

app = typer.Typer(name="flowlab", add_completion=False, no_args_is_help=True)
console = Console()

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", "-c", help="YAML run configuration")]
SetOpt = Annotated[Optional[List[str]], typer.Option("--set", help="key=value override, repeatable")]
SystemOpt = Annotated[Optional[str], typer.Option("--system", help="Registry name or YAML definition")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Ensemble seed")]
ThreadsOpt = Annotated[Optional[int], typer.Option("--threads", help="Worker processes (default: all cores)")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", help="Output directory")]

CRITERIA = ("nue", "nueT", "sr", "ase", "volume", "identity")


def guarded(command):
    """Map lab errors to exit codes: 2 for usage/config problems, 3 for numerical failures."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except FlowLabError as exc:
            logger.error(exc.message, extra={"command": command.__name__, "context": exc.context})
            typer.echo(f"error: {exc.message}", err=True)
            raise typer.Exit(code=exc.exit_code)
        except ValidationError as exc:
            typer.echo(f"error: invalid parameters: {exc.errors(include_url=False)}", err=True)
            raise typer.Exit(code=EXIT_USAGE)

    return wrapper


def load_config(
    command: str,
    config: Optional[Path],
    overrides: Optional[List[str]],
    system: Optional[str] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    out: Optional[Path] = None,
) -> RunConfig:
    cfg = RunConfig.from_yaml(config) if config else RunConfig()
    cfg = cfg.with_overrides(list(overrides or []))
    flags = {"command": command}
    if system is not None:
        flags["system"] = system
    if seed is not None:
        flags["seed"] = seed
    if threads is not None:
        flags["threads"] = threads
    if out is not None:
        flags["out_dir"] = str(out)
    cfg = RunConfig.validated({**cfg.model_dump(), **flags})
    set_log_level(cfg.log_level)
    logger.info("run configured", extra={"command": command, "system": cfg.system, "config_hash": cfg.digest()})
    return cfg


def _header(cfg: RunConfig, system: str) -> ProvenanceHeader:
    return ProvenanceHeader(command=cfg.command, system=system, seed=cfg.seed, config_hash=cfg.digest())


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError(f"--seed is mandatory for {cfg.command}")
    return cfg.seed


def _start_point(sys, cfg: RunConfig, integ) -> np.ndarray:
    if cfg.x0 is not None:
        x0 = np.asarray(cfg.x0, dtype=float)
        if x0.shape != (sys.dim,):
            raise ConfigError(f"x0 must have {sys.dim} coordinates", x0=cfg.x0)
        return x0
    x = sample_initial_conditions(sys, 1, cfg.seed or 0)[0]
    return advance(sys, x, cfg.burn_in, integ) if cfg.burn_in > 0 else x


@app.command()
@guarded
def simulate(
    config: ConfigOpt = None,
    set_: SetOpt = None,
    system: SystemOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
):
    """Integrate one orbit and write (t, x, |G|) rows."""
    cfg = load_config("simulate", config, set_, system, seed, None, out)
    sys = get_system(cfg.system)
    integ = cfg.integrator()
    x0 = _start_point(sys, cfg, integ)
    times, points = trajectory(sys, x0, cfg.t, integ, cfg.sample_every)
    norms = np.linalg.norm(sys.eval(points), axis=-1)
    columns = ["t"] + [f"x{i}" for i in range(sys.dim)] + ["norm_G"]
    rows = ([t, *p, g] for t, p, g in zip(times, points, norms))
    path = write_csv(
        Path(cfg.out_dir) / "trajectory.csv", _header(cfg, sys.name), columns, rows, {"params": sys.params, "x0": x0}
    )
    typer.echo(str(path))


@app.command()
@guarded
def splitting(
    config: ConfigOpt = None,
    set_: SetOpt = None,
    system: SystemOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
):
    """Splitting estimate, domination rates, cone invariance and equilibrium profile at one point."""
    cfg = load_config("splitting", config, set_, system, seed, None, out)
    sys = get_system(cfg.system)
    integ = cfg.integrator()
    x0 = _start_point(sys, cfg, integ)
    body = {
        "estimate": estimate_splitting(sys, x0, cfg.warm, cfg.warm, integ),
        "domination": domination_check(sys, x0, cfg.t, integ, cfg.warm),
        "cone": cone_invariance_check(sys, x0, cfg.a_width, cfg.t, cfg.cone_samples, integ, cfg.warm),
        "equilibria": equilibrium_profile(sys),
    }
    path = write_json(Path(cfg.out_dir) / "splitting.json", _header(cfg, sys.name), body)
    typer.echo(str(path))


@app.command()
@guarded
def pliss(
    config: ConfigOpt = None,
    set_: SetOpt = None,
    system: SystemOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
):
    """Hyperbolic times of one cocycle trace."""
    cfg = load_config("pliss", config, set_, system, seed, None, out)
    sys = get_system(cfg.system)
    integ = cfg.integrator()
    x0 = _start_point(sys, cfg, integ)
    trace = cocycle_trace(sys, x0, cfg.n, cfg.delta0, integ, period=cfg.period, warm=cfg.warm)
    hcfg = HyperbolicTimeConfig(
        c0=cfg.c0, delta0=cfg.delta0, eps0=cfg.eps0, lip_bound=sys.lip_bound, kappa_min=cfg.kappa_min
    )
    times = hyperbolic_times(trace, hcfg)
    header = _header(cfg, sys.name)
    out_dir = Path(cfg.out_dir)
    origin = {"x0": x0, "base": trace.base, "delta0": trace.delta, "period": trace.period}
    body = {
        "N": times.N,
        "c0": times.c0,
        "indices": times.indices,
        "margins": times.checks,
        "density": times.density,
        "reason": times.reason,
        "config": hcfg,
        **origin,
    }
    write_json(out_dir / "pliss.json", header, body)
    margins = ([c.index, c.hyptimex_margin, c.srtimex_margin, c.lead_ok] for c in times.checks)
    write_csv(
        out_dir / "pliss_times.csv",
        header,
        ["index", "hyptimex_margin", "srtimex_margin", "lead_ok"],
        margins,
        {"N": times.N, "c0": times.c0, "density": times.density},
    )
    marked = set(times.indices)
    rows = (
        [i, trace.a[i], trace.logP[i], trace.logG[i], trace.logdet_cu[i], trace.dist_trunc[i], (i + 1) in marked]
        for i in range(trace.n)
    )
    columns = ["i", "a", "logP", "logG", "logdet_cu", "dist_trunc", "hyperbolic_next"]
    path = write_csv(out_dir / "pliss_trace.csv", header, columns, rows, origin)
    typer.echo(str(path))


def _run_criterion(which: str, cfg: RunConfig) -> CriterionReport:
    ens = EnsembleSpec(system=cfg.system, count=cfg.count, seed=_require_seed(cfg), burn_in=cfg.burn_in)
    integ = cfg.integrator()
    threads = cfg.threads
    if which == "nue":
        return nue_test(ens, cfg.c0, cfg.n, integ, delta=cfg.delta, warm=cfg.warm, threads=threads)
    if which == "nueT":
        return nue_T_test(ens, cfg.c0, cfg.period, cfg.n, integ, delta=cfg.delta, warm=cfg.warm, threads=threads)
    if which == "sr":
        return sr_test(ens, cfg.delta, cfg.eps, cfg.horizon, integ, cfg.delta_list, cfg.eps_list, threads=threads)
    if which == "ase":
        return ase_test(ens, cfg.c_star, cfg.horizon, cfg.plane_samples, integ, warm=cfg.warm, threads=threads)
    if which == "volume":
        return volume_expansion_test(ens, cfg.theta, cfg.horizon, integ, warm=cfg.warm, threads=threads)
    return identity_test(
        ens, cfg.n, cfg.identity_tol, integ, delta=cfg.delta, period=cfg.period, warm=cfg.warm, threads=threads
    )


@app.command()
@guarded
def criteria(
    which: Annotated[str, typer.Option("--which", help="nue | nueT | sr | ase | volume | identity")],
    config: ConfigOpt = None,
    set_: SetOpt = None,
    system: SystemOpt = None,
    seed: SeedOpt = None,
    threads: ThreadsOpt = None,
    out: OutOpt = None,
):
    """Ensemble verdicts for one criterion; exit 1 when the pass fraction is below the configured level."""
    if which not in CRITERIA:
        raise ConfigError(f"unknown criterion {which!r}; choose one of {', '.join(CRITERIA)}")
    cfg = load_config("criteria", config, set_, system, seed, threads, out)
    report = _run_criterion(which, cfg)
    header = _header(cfg, report.system)
    out_dir = Path(cfg.out_dir)
    path = write_json(out_dir / f"criteria_{which}.json", header, report)
    rows = ([v.index, k, r] for v in report.per_orbit for k, r in enumerate(v.running))
    write_csv(out_dir / f"criteria_{which}.csv", header, ["orbit", "k", "running"], rows, {"criterion": which})
    typer.echo(str(path))
    if report.valid_count == 0:
        typer.echo("error: every orbit was excluded", err=True)
        raise typer.Exit(code=EXIT_NUMERICAL)
    if report.pass_fraction < cfg.pass_fraction:
        raise typer.Exit(code=EXIT_CRITERION_FAIL)


@app.command()
@guarded
def srb(
    config: ConfigOpt = None,
    set_: SetOpt = None,
    system: SystemOpt = None,
    seed: SeedOpt = None,
    threads: ThreadsOpt = None,
    out: OutOpt = None,
):
    """Occupation measures of an ensemble, their clusters and basin fractions; optional disk pushforward."""
    cfg = load_config("srb", config, set_, system, seed, threads, out)
    seed = _require_seed(cfg)
    sys = get_system(cfg.system)
    integ = cfg.integrator()
    grid = trap_grid(sys, cfg.grid_res)
    panel = coordinate_panel(sys.dim)
    ens = EnsembleSpec(system=cfg.system, count=cfg.count, seed=seed, burn_in=cfg.burn_in)
    measures, panels, excluded = orbit_statistics(ens, sys, cfg.horizon, grid, panel, integ, cfg.threads)
    kept = [i for i, m in enumerate(measures) if m is not None]
    if not kept:
        raise EmptyMeasureError("every orbit was excluded", system=sys.name)
    clusters = cluster_measures([measures[i] for i in kept], cfg.radius, [panels[i] for i in kept])

    basin_ens = EnsembleSpec(system=cfg.system, count=cfg.basin_count, seed=seed + 1, burn_in=cfg.burn_in)
    coverage = basin_coverage(basin_ens, clusters.panels, panel, cfg.tol, integ, cfg.horizon, cfg.threads)

    header = _header(cfg, sys.name)
    out_dir = Path(cfg.out_dir)
    for k, rep in enumerate(clusters.representatives):
        extra = {"grid": grid, "cluster": k}
        write_csv(out_dir / f"measure_{k}.csv", header, ["cell", "weight"], enumerate(rep.weights), extra)
        write_csv(out_dir / f"marginal_{k}.csv", header, ["x0", "x2", "weight"], marginal(rep, (0, 2)), extra)

    body = {
        "clusters": [[kept[i] for i in members] for members in clusters.clusters],
        "radius": clusters.radius,
        "panels": clusters.panels,
        "panel": [repr(obs) for obs in panel],
        "excluded_count": excluded,
        "basin": coverage,
        "note": "pushforward particles are not disjointified into ball families",
    }
    if cfg.disk_particles > 0:
        start = _start_point(sys, cfg, integ)
        disk = sample_disk(sys, start, cfg.disk_radius, cfg.disk_particles, integ, seed=seed, warm=cfg.warm)
        hcfg = HyperbolicTimeConfig(
            c0=cfg.c0, delta0=cfg.delta0, eps0=cfg.eps0, lip_bound=sys.lip_bound, kappa_min=cfg.kappa_min
        )
        pushed = disk_pushforward(sys, disk, cfg.n_max, hcfg, grid, integ, period=cfg.period, threads=cfg.threads)
        rows = enumerate(pushed.measure.weights)
        write_csv(out_dir / "pushforward.csv", header, ["cell", "weight"], rows, {"grid": grid})
        body["pushforward"] = {
            "retained_fraction": pushed.retained_fraction,
            "retained_pairs": pushed.retained_pairs,
            "particle_count": pushed.particle_count,
            "excluded_count": pushed.excluded_count,
            "l1_to_representative": pushed.measure.l1(clusters.representatives[0]),
        }
    path = write_json(out_dir / "srb.json", header, body)
    typer.echo(str(path))


@app.command()
@guarded
def report(out: OutOpt = None):
    """Summarize every JSON report in the output directory into a table and summary.json."""
    out_dir = Path(out or RunConfig().out_dir)
    if not out_dir.is_dir():
        raise ConfigError(f"no output directory {out_dir}")
    table = Table(title=f"reports in {out_dir}")
    for column in ("file", "command", "system", "seed", "result", "excluded"):
        table.add_column(column)
    rows = []
    inputs = []
    for path in sorted(out_dir.glob("*.json")):
        if path.name.endswith(".header.json") or path.name == "summary.json":
            continue
        envelope = json.loads(path.read_text(encoding="utf-8"))
        head, body = envelope["header"], envelope["body"]
        if "pass_fraction" in body:
            result = f"{body['criterion']}: pass {body['pass_fraction']:.3f}"
        elif "clusters" in body:
            result = f"{len(body['clusters'])} cluster(s)"
        elif "indices" in body:
            result = f"{len(body['indices'])} hyperbolic time(s), density {body['density']:.3f}"
        else:
            result = "-"
        row = {
            "file": path.name,
            "command": head.get("command"),
            "system": head.get("system"),
            "seed": head.get("seed"),
            "result": result,
            "excluded": body.get("excluded_count"),
        }
        rows.append(row)
        inputs.append([path.name, head.get("config_hash")])
        table.add_row(*("" if v is None else str(v) for v in row.values()))
    console.print(table)
    header = ProvenanceHeader(command="report", config_hash=config_hash({"command": "report", "inputs": inputs}))
    write_json(out_dir / "summary.json", header, {"reports": rows})


if __name__ == "__main__":
    app()
