"""
Registry of vector fields.

Systems are addressed by a registry string such as ``lorenz`` or
``saddle(1,1,2)``, by a mapping holding a polynomial definition, or by the path
of a YAML file with such a mapping. ``SystemSpec.source`` keeps the address so
worker processes can rebuild the system.
"""

import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
import yaml

from Common import ConfigError, UnknownSystemError, get_service_logger

from .models import SystemSpec

logger = get_service_logger(__name__)

# linear test fields grow exponentially; the box only guards against overflow
LINEAR_BOX = 1e100

_NAME = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


class _Ball:
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def __call__(self, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) <= self.radius)


class _Slab:
    """Axis-aligned box membership; degenerate axes (lo == hi) are matched exactly."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    def __call__(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lo) & (x <= self.hi)))


class _Linear:
    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)

    def field(self, x):
        return np.asarray(x, dtype=float) @ self.A.T

    def jacobian(self, x):
        return self.A.copy()


def _linear_system(name: str, A, d_s: int, params: Dict[str, float], source: Any) -> SystemSpec:
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    lin = _Linear(A)
    lip = float(np.linalg.norm(A, 2))
    return SystemSpec(
        name=name,
        dim=m,
        vector_field=lin.field,
        jacobian=lin.jacobian,
        equilibria=np.zeros((1, m)),
        box_lo=-LINEAR_BOX * np.ones(m),
        box_hi=LINEAR_BOX * np.ones(m),
        trap_lo=-np.ones(m),
        trap_hi=np.ones(m),
        trap_predicate=_Ball(np.zeros(m), 1.0),
        lip_bound=lip if lip > 0 else 1.0,
        d_s=d_s,
        d_cu=m - d_s,
        params=params,
        source=source,
    )


class _Constant:
    def __init__(self, m):
        self.e1 = np.zeros(m)
        self.e1[0] = 1.0

    def field(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.e1, x.shape).copy()

    def jacobian(self, x):
        return np.zeros((self.e1.size, self.e1.size))


def constant() -> SystemSpec:
    """G = e_1 on R^3: no equilibria, D phi_t = identity, E^cu declared as span(e_1, e_2)."""
    c = _Constant(3)
    return SystemSpec(
        name="constant",
        dim=3,
        vector_field=c.field,
        jacobian=c.jacobian,
        equilibria=[],
        box_lo=-LINEAR_BOX * np.ones(3),
        box_hi=LINEAR_BOX * np.ones(3),
        trap_lo=-np.ones(3),
        trap_hi=np.ones(3),
        trap_predicate=_Ball(np.zeros(3), 1.0),
        lip_bound=1.0,
        d_s=1,
        d_cu=2,
        ecu_frame=np.eye(3)[:, :2],
        source="constant",
    )


def saddle(lam_u: float = 1.0, lam_s: float = 1.0, lam_ss: float = 2.0) -> SystemSpec:
    if min(lam_u, lam_s, lam_ss) <= 0:
        raise ConfigError("saddle rates must be positive")
    params = {"lam_u": lam_u, "lam_s": lam_s, "lam_ss": lam_ss}
    name = f"saddle({lam_u:g},{lam_s:g},{lam_ss:g})"
    return _linear_system(name, np.diag([lam_u, -lam_s, -lam_ss]), 1, params, name)


def diagonal(a: float = 1.0, b: float = 0.5, c: float = -2.0) -> SystemSpec:
    """Linear field diag(a, b, c); the last axis is declared stable."""
    name = f"diagonal({a:g},{b:g},{c:g})"
    return _linear_system(name, np.diag([a, b, c]), 1, {"a": a, "b": b, "c": c}, name)


def shear() -> SystemSpec:
    """Jordan block in (x, y) with a contracting z axis; every point of the x axis is fixed."""
    A = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]]
    return _linear_system("shear", A, 1, {}, "shear")


class _Drift:
    def __init__(self, lam_u, lam_s):
        self.lam_u = lam_u
        self.lam_s = lam_s

    def field(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack(
            [np.ones_like(x[..., 0]), self.lam_u * x[..., 1], -self.lam_s * x[..., 2]], axis=-1
        )

    def jacobian(self, x):
        return np.diag([0.0, self.lam_u, -self.lam_s])


def drift(lam_u: float = 1.0, lam_s: float = 1.0) -> SystemSpec:
    """
    G = (1, lam_u y, -lam_s z), an equilibrium-free flow.

    Sampling happens on the invariant plane y = 0, where the flow direction
    stays e_1, N^cu = span(e_2), and the normal cocycle is exactly e^{lam_u}.
    """
    if lam_u <= 0 or lam_s <= 0:
        raise ConfigError("drift rates must be positive")
    d = _Drift(lam_u, lam_s)
    name = f"drift({lam_u:g},{lam_s:g})"
    lo, hi = np.array([-1.0, 0.0, -1.0]), np.array([1.0, 0.0, 1.0])
    return SystemSpec(
        name=name,
        dim=3,
        vector_field=d.field,
        jacobian=d.jacobian,
        equilibria=[],
        box_lo=-LINEAR_BOX * np.ones(3),
        box_hi=LINEAR_BOX * np.ones(3),
        trap_lo=lo,
        trap_hi=hi,
        trap_predicate=_Slab(lo, hi),
        lip_bound=max(lam_u, lam_s),
        d_s=1,
        d_cu=2,
        params={"lam_u": lam_u, "lam_s": lam_s},
        source=name,
    )


class _Lorenz:
    def __init__(self, sigma, rho, beta):
        self.sigma = sigma
        self.rho = rho
        self.beta = beta

    def field(self, x):
        x = np.asarray(x, dtype=float)
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack(
            [self.sigma * (Y - X), X * (self.rho - Z) - Y, X * Y - self.beta * Z], axis=-1
        )

    def jacobian(self, x):
        X, Y, Z = x
        return np.array(
            [
                [-self.sigma, self.sigma, 0.0],
                [self.rho - Z, -1.0, -X],
                [Y, X, -self.beta],
            ]
        )


def lorenz_trap(sigma: float, rho: float, beta: float) -> Tuple[np.ndarray, float]:
    """
    Trapping ball of the Lorenz field.

    V = x^2 + y^2 + (z - rho - sigma)^2 decreases outside the ellipsoid
    sigma x^2 + y^2 + beta (z - (rho+sigma)/2)^2 = beta (rho+sigma)^2 / 4, so any ball
    about (0, 0, rho+sigma) containing that ellipsoid is positively invariant.
    """
    half = 0.5 * (rho + sigma)
    radius = half * (1.0 + max(1.0, np.sqrt(beta), np.sqrt(beta / sigma))) * 1.05
    return np.array([0.0, 0.0, rho + sigma]), float(radius)


def _lorenz_system(name: str, sigma: float, rho: float, beta: float, source: Any) -> SystemSpec:
    if sigma <= 0 or beta <= 0 or rho <= 0:
        raise ConfigError("Lorenz parameters must be positive", system=name)
    center, radius = lorenz_trap(sigma, rho, beta)
    trap_lo, trap_hi = center - radius, center + radius
    box_lo, box_hi = center - 1.1 * radius, center + 1.1 * radius

    equilibria = [np.zeros(3)]
    if rho > 1:
        r = np.sqrt(beta * (rho - 1.0))
        equilibria += [np.array([r, r, rho - 1.0]), np.array([-r, -r, rho - 1.0])]

    # Frobenius bound of DG over the box
    xm = max(abs(box_lo[0]), abs(box_hi[0]))
    ym = max(abs(box_lo[1]), abs(box_hi[1]))
    zm = max(abs(rho - box_lo[2]), abs(rho - box_hi[2]))
    lip = float(np.sqrt(2 * sigma**2 + zm**2 + 1.0 + 2 * xm**2 + ym**2 + beta**2))

    lz = _Lorenz(sigma, rho, beta)
    return SystemSpec(
        name=name,
        dim=3,
        vector_field=lz.field,
        jacobian=lz.jacobian,
        equilibria=np.array(equilibria),
        box_lo=box_lo,
        box_hi=box_hi,
        trap_lo=trap_lo,
        trap_hi=trap_hi,
        trap_predicate=_Ball(center, radius),
        lip_bound=lip,
        d_s=1,
        d_cu=2,
        params={"sigma": sigma, "rho": rho, "beta": beta},
        source=source,
    )


def lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> SystemSpec:
    default = (sigma, rho, beta) == (10.0, 28.0, 8.0 / 3.0)
    name = "lorenz" if default else f"lorenz({sigma:g},{rho:g},{beta:g})"
    return _lorenz_system(name, sigma, rho, beta, name if not default else "lorenz")


def contracting_lorenz() -> SystemSpec:
    """Lorenz with beta = 12: at the origin lambda_u + lambda_s < 0."""
    return _lorenz_system("contracting_lorenz", 10.0, 28.0, 12.0, "contracting_lorenz")


class _Hopf:
    def __init__(self, mu, omega):
        self.mu = mu
        self.omega = omega

    def field(self, x):
        x = np.asarray(x, dtype=float)
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        r2 = X * X + Y * Y
        return np.stack(
            [self.mu * X - self.omega * Y - X * r2, self.omega * X + self.mu * Y - Y * r2, -Z], axis=-1
        )

    def jacobian(self, x):
        X, Y, _ = x
        return np.array(
            [
                [self.mu - 3 * X * X - Y * Y, -self.omega - 2 * X * Y, 0.0],
                [self.omega - 2 * X * Y, self.mu - X * X - 3 * Y * Y, 0.0],
                [0.0, 0.0, -1.0],
            ]
        )


def hopf(mu: float = 1.0, omega: float = 1.0) -> SystemSpec:
    """Radial Hopf normal form with limit cycle r = sqrt(mu) in z = 0."""
    if mu <= 0:
        raise ConfigError("hopf needs mu > 0")
    radius = float(np.sqrt(mu + mu * mu / 4.0) + 1.0)
    half = 1.1 * radius
    bound = abs(mu) + 4 * half**2
    cross = abs(omega) + 2 * half**2
    hp = _Hopf(mu, omega)
    name = f"hopf({mu:g},{omega:g})"
    return SystemSpec(
        name=name,
        dim=3,
        vector_field=hp.field,
        jacobian=hp.jacobian,
        equilibria=np.zeros((1, 3)),
        box_lo=-half * np.ones(3),
        box_hi=half * np.ones(3),
        trap_lo=-radius * np.ones(3),
        trap_hi=radius * np.ones(3),
        trap_predicate=_Ball(np.zeros(3), radius),
        lip_bound=float(np.sqrt(2 * bound**2 + 2 * cross**2 + 1.0)),
        d_s=1,
        d_cu=2,
        params={"mu": mu, "omega": omega},
        source=name,
    )


class _Bistable:
    def field(self, x):
        x = np.asarray(x, dtype=float)
        X = x[..., 0]
        return np.stack([X - X**3, -x[..., 1], -x[..., 2]], axis=-1)

    def jacobian(self, x):
        return np.diag([1.0 - 3.0 * x[0] ** 2, -1.0, -1.0])


def bistable() -> SystemSpec:
    """Gradient field with sinks (+-1, 0, 0); the plane x = 0 separates the basins."""
    bs = _Bistable()
    half = 2.2
    return SystemSpec(
        name="bistable",
        dim=3,
        vector_field=bs.field,
        jacobian=bs.jacobian,
        equilibria=np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        box_lo=-half * np.ones(3),
        box_hi=half * np.ones(3),
        trap_lo=-2.0 * np.ones(3),
        trap_hi=2.0 * np.ones(3),
        trap_predicate=_Ball(np.zeros(3), 2.0),
        lip_bound=3.0 * half**2 - 1.0,
        d_s=1,
        d_cu=2,
        source="bistable",
    )


REGISTRY: Dict[str, Callable[..., SystemSpec]] = {
    "constant": constant,
    "saddle": saddle,
    "diagonal": diagonal,
    "shear": shear,
    "drift": drift,
    "lorenz": lorenz,
    "contracting_lorenz": contracting_lorenz,
    "hopf": hopf,
    "bistable": bistable,
}


def parse_system_name(name: str) -> Tuple[str, List[float]]:
    match = _NAME.match(name)
    if not match:
        raise UnknownSystemError(
            f"malformed system name {name!r}; registry: {', '.join(sorted(REGISTRY))}", system=name
        )
    key, args = match.group(1), match.group(2)
    params: List[float] = []
    if args is not None and args.strip():
        try:
            params = [float(p) for p in args.split(",")]
        except ValueError:
            raise UnknownSystemError(
                f"malformed parameters in {name!r}; registry: {', '.join(sorted(REGISTRY))}",
                system=name,
            ) from None
    return key, params


def get_system(source: Any) -> SystemSpec:
    """
    Resolve a system address.

    Args:
        source: Registry string, polynomial definition mapping, or YAML path.

    Raises:
        UnknownSystemError: Unknown or malformed registry name.
        ConfigError: Invalid parameters or definition.
    """
    if isinstance(source, dict):
        if "scale" in source:
            return scale_system(get_system(source["base"]), float(source["scale"]))
        return build_polynomial(source)
    if isinstance(source, Path) or (isinstance(source, str) and source.endswith((".yaml", ".yml"))):
        return load_system(source)

    key, params = parse_system_name(str(source))
    if key not in REGISTRY:
        raise UnknownSystemError(
            f"unknown system {key!r}; registry: {', '.join(sorted(REGISTRY))}", system=str(source)
        )
    try:
        return REGISTRY[key](*params)
    except TypeError:
        raise ConfigError(f"wrong number of parameters for {key!r}", system=str(source)) from None


def builtin_systems() -> List[SystemSpec]:
    return [factory() for factory in REGISTRY.values()]


class PolynomialField:
    """
    Polynomial right-hand side with analytic Jacobian.

    ``terms[i]`` lists (coefficient, exponents) monomials of component i.
    """

    def __init__(self, dim: int, terms: Sequence[Sequence[Tuple[float, Sequence[int]]]]):
        self.dim = dim
        self.coef = []
        self.expo = []
        for comp in terms:
            c = np.array([float(t[0]) for t in comp], dtype=float)
            e = np.array([list(t[1]) for t in comp], dtype=int).reshape(len(comp), dim)
            self.coef.append(c)
            self.expo.append(e)

    def field(self, x):
        x = np.asarray(x, dtype=float)
        out = []
        for c, e in zip(self.coef, self.expo):
            if c.size == 0:
                out.append(np.zeros(x.shape[:-1]))
                continue
            mono = np.prod(x[..., None, :] ** e, axis=-1)
            out.append(mono @ c)
        return np.stack(out, axis=-1)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        J = np.zeros((self.dim, self.dim))
        for i, (c, e) in enumerate(zip(self.coef, self.expo)):
            for k in range(self.dim):
                ek = e[:, k]
                active = ek > 0
                if not np.any(active):
                    continue
                lowered = e[active].copy()
                lowered[:, k] -= 1
                mono = np.prod(x ** lowered, axis=-1)
                J[i, k] = float(np.sum(c[active] * ek[active] * mono))
        return J


def build_polynomial(defn: Dict[str, Any]) -> SystemSpec:
    """
    Build a SystemSpec from a polynomial definition.

    Keys: name, dim, terms, equilibria, box {lo, hi}, trap {center, radius},
    d_s, d_cu and optionally lip_bound. Without lip_bound the Frobenius norm of
    DG is sampled over the box and inflated by 25%.
    """
    try:
        dim = int(defn["dim"])
        terms = defn["terms"]
        if len(terms) != dim:
            raise ConfigError("terms must list one polynomial per component")
        poly = PolynomialField(dim, terms)
        box = defn["box"]
        trap = defn.get("trap")
        box_lo = np.asarray(box["lo"], dtype=float)
        box_hi = np.asarray(box["hi"], dtype=float)
        if trap is not None:
            center = np.asarray(trap["center"], dtype=float)
            radius = float(trap["radius"])
            trap_lo, trap_hi = center - radius, center + radius
            predicate = _Ball(center, radius)
        else:
            trap_lo, trap_hi = box_lo, box_hi
            predicate = _Slab(box_lo, box_hi)
        lip = defn.get("lip_bound")
        if lip is None:
            rng = np.random.default_rng(0)
            samples = rng.uniform(box_lo, box_hi, size=(4096, dim))
            lip = 1.25 * max(float(np.linalg.norm(poly.jacobian(p))) for p in samples)
            logger.warning("lip_bound estimated by sampling", extra={"system": defn.get("name"), "lip_bound": lip})
        d_s = int(defn.get("d_s", 1))
        return SystemSpec(
            name=str(defn.get("name", "custom")),
            dim=dim,
            vector_field=poly.field,
            jacobian=poly.jacobian,
            equilibria=defn.get("equilibria", []) or [],
            box_lo=box_lo,
            box_hi=box_hi,
            trap_lo=trap_lo,
            trap_hi=trap_hi,
            trap_predicate=predicate,
            lip_bound=max(float(lip), 1e-12),
            d_s=d_s,
            d_cu=int(defn.get("d_cu", dim - d_s)),
            ecu_frame=defn.get("ecu_frame"),
            source=defn,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid system definition: {exc}") from exc


def load_system(path) -> SystemSpec:
    path = Path(path)
    try:
        defn = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read system file {path}: {exc}", path=str(path)) from exc
    if not isinstance(defn, dict):
        raise ConfigError("system file must hold a mapping", path=str(path))
    return build_polynomial(defn)


def scale_system(sys: SystemSpec, T: float) -> SystemSpec:
    """The field T G; its time-1 map is the time-T map of G."""
    if T <= 0:
        raise ConfigError("time scale must be positive")
    base_field, base_jac = sys.vector_field, sys.jacobian
    return sys.model_copy(
        update={
            "name": f"{sys.name}*{T:g}",
            "vector_field": _Scaled(base_field, T),
            "jacobian": _Scaled(base_jac, T),
            "lip_bound": sys.lip_bound * T,
            "source": {"scale": T, "base": sys.source},
        }
    )


class _Scaled:
    def __init__(self, fn, T):
        self.fn = fn
        self.T = T

    def __call__(self, x):
        return self.T * np.asarray(self.fn(x), dtype=float)
