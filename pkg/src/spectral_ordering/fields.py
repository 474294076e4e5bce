"""
Coefficient fields for weighted elliptic operators

Densities, potentials and diffusion matrices are closures over analytic
formulas evaluated on arrays of points of shape (n, d). Optional analytic
gradients and Hessians travel with each field; finite-difference fallbacks
live here as well so every checker differentiates the same way.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy.sparse.csgraph import breadth_first_order
from scipy import sparse
from scipy.spatial import cKDTree
from shapely.geometry import MultiPoint, Point

from .config import config
from .errors import DomainGuardError, FieldError
from .geometry import Mesh

logger = logging.getLogger(__name__)

PointFunction = Callable[[np.ndarray], np.ndarray]
ComplexFunction = Callable[[np.ndarray], np.ndarray]


def as_points(points, dimension: Optional[int] = None) -> np.ndarray:
    """Coerce to an (n, d) float array; a 1D input is a single point"""
    array = np.asarray(points, dtype=float)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    if dimension is not None and array.shape[1] != dimension:
        raise FieldError(f"expected points of dimension {dimension}, got {array.shape[1]}")
    return array


def to_complex(points: np.ndarray) -> np.ndarray:
    return points[:, 0] + 1j * points[:, 1]


@dataclass(frozen=True)
class DomainGuard:
    """Points must keep distance >= min_radius from `center`"""
    min_radius: float
    center: Tuple[float, ...] = (0.0, 0.0)

    def allows(self, points: np.ndarray) -> np.ndarray:
        center = np.asarray(self.center[:points.shape[1]])
        return np.linalg.norm(points - center, axis=1) >= self.min_radius * (1 - 1e-12)

    def check(self, points: np.ndarray) -> None:
        allowed = self.allows(points)
        if not allowed.all():
            worst = points[np.argmin(allowed)]
            raise DomainGuardError(
                f"point {worst.tolist()} is closer than {self.min_radius:.3g} to {list(self.center)}"
            )


@dataclass(frozen=True)
class ScalarField:
    """Real field with optional analytic derivatives and certified bounds"""
    name: str
    evaluator: PointFunction = field(repr=False)
    gradient: Optional[PointFunction] = field(default=None, repr=False)
    hessian: Optional[PointFunction] = field(default=None, repr=False)
    lower_bound: float = -math.inf
    upper_bound: float = math.inf
    domain_guard: Optional[DomainGuard] = None
    params: Dict[str, object] = field(default_factory=dict)

    def evaluate(self, points) -> np.ndarray:
        points = as_points(points)
        if self.domain_guard is not None:
            self.domain_guard.check(points)
        return np.asarray(self.evaluator(points), dtype=float).reshape(points.shape[0])

    def __call__(self, points):
        values = self.evaluate(points)
        return float(values[0]) if np.ndim(points) <= 1 else values

    def grad(self, points) -> np.ndarray:
        """Analytic gradient when supplied, central differences otherwise"""
        points = as_points(points)
        if self.gradient is None:
            return finite_difference_gradient(self, points)
        if self.domain_guard is not None:
            self.domain_guard.check(points)
        return np.asarray(self.gradient(points), dtype=float).reshape(points.shape)

    def hess(self, points) -> np.ndarray:
        points = as_points(points)
        if self.hessian is None:
            return finite_difference_hessian(self, points)
        if self.domain_guard is not None:
            self.domain_guard.check(points)
        n, d = points.shape
        return np.asarray(self.hessian(points), dtype=float).reshape(n, d, d)

    @property
    def field_id(self) -> str:
        payload = json.dumps({"name": self.name, "params": self.params}, sort_keys=True, default=str)
        return hashlib.md5(payload.encode()).hexdigest()[:12]

    def scaled(self, factor: float) -> "ScalarField":
        """The field multiplied by a constant"""
        bounds = sorted((factor * self.lower_bound, factor * self.upper_bound))
        return ScalarField(
            name=f"{factor}*{self.name}",
            evaluator=lambda x: factor * self.evaluator(x),
            gradient=None if self.gradient is None else (lambda x: factor * self.gradient(x)),
            hessian=None if self.hessian is None else (lambda x: factor * self.hessian(x)),
            lower_bound=bounds[0] if np.isfinite(bounds[0]) else -math.inf,
            upper_bound=bounds[1] if np.isfinite(bounds[1]) else math.inf,
            domain_guard=self.domain_guard,
            params={**self.params, "scale": factor},
        )

    def composed_affine(self, matrix: Sequence[Sequence[float]], shift: Sequence[float]) -> "ScalarField":
        """The field x -> f(Q x + s) for an orthogonal Q"""
        q = np.asarray(matrix, dtype=float)
        s = np.asarray(shift, dtype=float)

        def mapped(x):
            return x @ q.T + s

        guard = None
        if self.domain_guard is not None:
            center = q.T @ (np.asarray(self.domain_guard.center[:len(s)]) - s)
            guard = DomainGuard(self.domain_guard.min_radius, tuple(center.tolist()))
        return ScalarField(
            name=f"{self.name}@affine",
            evaluator=lambda x: self.evaluator(mapped(x)),
            gradient=None if self.gradient is None else (lambda x: self.gradient(mapped(x)) @ q),
            hessian=None if self.hessian is None else (
                lambda x: np.einsum("ki,nkl,lj->nij", q, self.hessian(mapped(x)), q)
            ),
            lower_bound=self.lower_bound,
            upper_bound=self.upper_bound,
            domain_guard=guard,
            params={**self.params, "matrix": q.tolist(), "shift": s.tolist()},
        )


@dataclass(frozen=True)
class MatrixField:
    """Symmetric uniformly elliptic matrix field"""
    name: str
    evaluator: PointFunction = field(repr=False)
    ellipticity_c: float
    dimension: int = 2
    constant_pairs: Tuple[Tuple[float, Tuple[float, ...]], ...] = ()
    params: Dict[str, object] = field(default_factory=dict)

    def evaluate(self, points) -> np.ndarray:
        points = as_points(points, self.dimension)
        values = np.asarray(self.evaluator(points), dtype=float).reshape(
            points.shape[0], self.dimension, self.dimension
        )
        asymmetry = np.abs(values - np.transpose(values, (0, 2, 1))).max(initial=0.0)
        if asymmetry > 1e-12:
            raise FieldError(f"matrix field {self.name} is not symmetric (defect {asymmetry:.2e})")
        smallest = np.linalg.eigvalsh(values)[:, 0]
        worst = int(np.argmin(smallest))
        if smallest[worst] < self.ellipticity_c * (1 - 1e-12):
            raise FieldError(
                f"matrix field {self.name} has eigenvalue {smallest[worst]:.4g} < "
                f"{self.ellipticity_c:.4g} at {points[worst].tolist()}"
            )
        return values

    def __call__(self, points):
        values = self.evaluate(points)
        return values[0] if np.ndim(points) <= 1 else values

    @property
    def field_id(self) -> str:
        payload = json.dumps({"name": self.name, "params": self.params}, sort_keys=True, default=str)
        return hashlib.md5(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class CoefficientSet:
    """(rho, V, A) for L = (1/rho)(-div A grad + V); defaults give the Laplacian"""
    rho: ScalarField
    V: Optional[ScalarField] = None
    A: Optional[MatrixField] = None
    domain_guard: Optional[DomainGuard] = None

    def density(self, points) -> np.ndarray:
        points = self._guarded(points)
        return self.rho.evaluate(points)

    def potential(self, points) -> np.ndarray:
        points = self._guarded(points)
        if self.V is None:
            return np.zeros(points.shape[0])
        return self.V.evaluate(points)

    def diffusion(self, points) -> np.ndarray:
        points = self._guarded(points)
        n, d = points.shape
        if self.A is None:
            return np.broadcast_to(np.eye(d), (n, d, d))
        return self.A.evaluate(points)

    def _guarded(self, points) -> np.ndarray:
        points = as_points(points)
        if self.domain_guard is not None:
            self.domain_guard.check(points)
        return points

    @property
    def has_potential(self) -> bool:
        return self.V is not None

    @property
    def is_identity_diffusion(self) -> bool:
        return self.A is None

    @property
    def coeff_id(self) -> str:
        parts = [self.rho.field_id, self.V.field_id if self.V else "-", self.A.field_id if self.A else "-"]
        if self.domain_guard is not None:
            parts.append(repr(self.domain_guard))
        return hashlib.md5("|".join(parts).encode()).hexdigest()[:12]

    def with_density(self, rho: ScalarField) -> "CoefficientSet":
        return CoefficientSet(rho=rho, V=self.V, A=self.A, domain_guard=self.domain_guard)

    def describe(self) -> dict:
        return {
            "coeff_id": self.coeff_id,
            "rho": {"name": self.rho.name, **_jsonable(self.rho.params)},
            "V": None if self.V is None else {"name": self.V.name, **_jsonable(self.V.params)},
            "A": None if self.A is None else {"name": self.A.name, **_jsonable(self.A.params)},
            "domain_guard": None if self.domain_guard is None else self.domain_guard.min_radius,
        }


def _jsonable(params: dict) -> dict:
    return {k: v if isinstance(v, (int, float, str, bool, list, type(None))) else repr(v)
            for k, v in params.items()}


def laplacian_coefficients() -> CoefficientSet:
    return CoefficientSet(rho=constant_field(1.0, name="unit_density"))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def _fd_step(points: np.ndarray, step: Optional[float]) -> float:
    if step is not None:
        return step
    span = float(np.linalg.norm(np.ptp(points, axis=0))) if points.shape[0] > 1 else 0.0
    return config.fd_relative_step * max(span, 1.0)


def _stencil_allowed(f: ScalarField, points: np.ndarray) -> np.ndarray:
    if f.domain_guard is None:
        return np.ones(points.shape[0], dtype=bool)
    return f.domain_guard.allows(points)


def _one_sided_direction(f: ScalarField, points: np.ndarray, axis: int, step: float) -> np.ndarray:
    """+1 where the forward stencil stays admissible, -1 otherwise"""
    shifted = points.copy()
    shifted[:, axis] += 3 * step
    return np.where(_stencil_allowed(f, shifted), 1.0, -1.0)


def finite_difference_gradient(f: ScalarField, points, step: Optional[float] = None) -> np.ndarray:
    """Second-order gradient; one-sided near the field's domain guard"""
    points = as_points(points)
    h = _fd_step(points, step)
    n, d = points.shape
    grad = np.zeros((n, d))
    for axis in range(d):
        e = np.zeros(d)
        e[axis] = h
        central = _stencil_allowed(f, points + e) & _stencil_allowed(f, points - e)
        if central.any():
            x = points[central]
            grad[central, axis] = (f.evaluate(x + e) - f.evaluate(x - e)) / (2 * h)
        if not central.all():
            x = points[~central]
            s = _one_sided_direction(f, x, axis, h)[:, None]
            grad[~central, axis] = (
                -3 * f.evaluate(x) + 4 * f.evaluate(x + s * e) - f.evaluate(x + 2 * s * e)
            ) / (2 * h * s[:, 0])
    return grad


def finite_difference_hessian(f: ScalarField, points, step: Optional[float] = None) -> np.ndarray:
    """Second-order central Hessian; first/second-order one-sided near the guard"""
    points = as_points(points)
    h = _fd_step(points, step)
    n, d = points.shape
    hess = np.zeros((n, d, d))
    center = f.evaluate(points)
    unit = np.eye(d) * h

    inside = np.ones(n, dtype=bool)
    for a in range(d):
        for b in range(d):
            for sa in (-1, 1):
                for sb in (-1, 1):
                    inside &= _stencil_allowed(f, points + sa * unit[a] + sb * unit[b])

    x = points[inside]
    c = center[inside]
    for a in range(d):
        ea = unit[a]
        hess[inside, a, a] = (f.evaluate(x + ea) - 2 * c + f.evaluate(x - ea)) / h**2
        for b in range(a + 1, d):
            eb = unit[b]
            mixed = (
                f.evaluate(x + ea + eb) - f.evaluate(x + ea - eb)
                - f.evaluate(x - ea + eb) + f.evaluate(x - ea - eb)
            ) / (4 * h**2)
            hess[inside, a, b] = hess[inside, b, a] = mixed

    if not inside.all():
        x = points[~inside]
        c = center[~inside]
        signs = np.column_stack([_one_sided_direction(f, x, a, h) for a in range(d)])
        for a in range(d):
            ea = signs[:, a:a + 1] * unit[a]
            hess[~inside, a, a] = (
                2 * c - 5 * f.evaluate(x + ea) + 4 * f.evaluate(x + 2 * ea) - f.evaluate(x + 3 * ea)
            ) / h**2
            for b in range(a + 1, d):
                eb = signs[:, b:b + 1] * unit[b]
                mixed = (
                    f.evaluate(x + ea + eb) - f.evaluate(x + ea) - f.evaluate(x + eb) + c
                ) / (h**2 * signs[:, a] * signs[:, b])
                hess[~inside, a, b] = hess[~inside, b, a] = mixed
    return hess


def finite_difference_laplacian(f: ScalarField, points, step: Optional[float] = None) -> np.ndarray:
    return np.trace(finite_difference_hessian(f, points, step), axis1=1, axis2=2)


def log_field(rho: ScalarField) -> ScalarField:
    """log rho, with derivatives derived from those of rho when present"""
    gradient = hessian = None
    if rho.gradient is not None:
        def gradient(x):
            return rho.gradient(x) / rho.evaluator(x)[:, None]
        if rho.hessian is not None:
            def hessian(x):
                value = rho.evaluator(x)[:, None, None]
                g = rho.gradient(x)
                return rho.hessian(x) / value - np.einsum("ni,nj->nij", g, g) / value**2
    return ScalarField(
        name=f"log({rho.name})",
        evaluator=lambda x: np.log(rho.evaluator(x)),
        gradient=gradient,
        hessian=hessian,
        domain_guard=rho.domain_guard,
        params=rho.params,
    )


def scaled_log_laplacian(rho: ScalarField, points, step: Optional[float] = None) -> np.ndarray:
    """Delta log rho relative to the size of its second differences (signed)"""
    points = as_points(points)
    if (rho.evaluate(points) <= 0).any():
        raise FieldError(f"density {rho.name} is not positive at a sample point")
    second = finite_difference_hessian(log_field(rho), points, step)
    diagonal = np.diagonal(second, axis1=1, axis2=2)
    return diagonal.sum(axis=1) / np.maximum(1.0, np.abs(diagonal).sum(axis=1))


# ---------------------------------------------------------------------------
# Scalar families
# ---------------------------------------------------------------------------

def constant_field(value: float, name: str = "constant") -> ScalarField:
    return ScalarField(
        name=name,
        evaluator=lambda x: np.full(x.shape[0], float(value)),
        gradient=lambda x: np.zeros_like(x),
        hessian=lambda x: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
        lower_bound=float(value),
        upper_bound=float(value),
        params={"value": float(value)},
    )


def _is_smooth_power(alpha: float) -> bool:
    return alpha >= 0 and float(alpha).is_integer() and int(alpha) % 2 == 0


def _power_parts(alpha: float):
    def value(x):
        r2 = np.einsum("ij,ij->i", x, x)
        return r2 ** (alpha / 2.0)

    def gradient(x):
        r2 = np.einsum("ij,ij->i", x, x)
        return alpha * (r2 ** ((alpha - 2.0) / 2.0))[:, None] * x

    def hessian(x):
        r2 = np.einsum("ij,ij->i", x, x)
        d = x.shape[1]
        hess = alpha * (r2 ** ((alpha - 2.0) / 2.0))[:, None, None] * np.eye(d)
        if alpha != 2:
            outer = np.einsum("ni,nj->nij", x, x)
            hess = hess + alpha * (alpha - 2.0) * (r2 ** ((alpha - 4.0) / 2.0))[:, None, None] * outer
        return hess

    return value, gradient, hessian


def power_density(alpha: float, delta: Optional[float] = None,
                  circumradius: Optional[float] = None,
                  domain: Optional[Mesh] = None) -> ScalarField:
    """
    rho(x) = |x|^alpha, guarded at distance delta from the origin

    Unless |x|^alpha is a polynomial, the guard radius defaults to half the
    distance from the convex hull of `domain` to the origin, and the
    circumradius to the largest node norm of `domain`.
    """
    guard = _origin_guard(alpha, delta, domain)
    if guard is not None and domain is not None and guard.min_radius > 2.0 * origin_clearance(domain):
        raise FieldError(f"guard radius {guard.min_radius:.3g} exceeds the distance from the domain to the origin")
    if circumradius is None and domain is not None:
        circumradius = float(np.linalg.norm(domain.nodes, axis=1).max())
    value, gradient, hessian = _power_parts(alpha)
    radius_low = guard.min_radius if guard else 0.0
    radius_high = circumradius if circumradius is not None else math.inf
    ends = [_safe_power(radius_low, alpha), _safe_power(radius_high, alpha)]
    return ScalarField(
        name="power",
        evaluator=value,
        gradient=gradient,
        hessian=hessian,
        lower_bound=min(ends),
        upper_bound=max(ends),
        domain_guard=guard,
        params={"alpha": alpha, "delta": guard.min_radius if guard else 0.0},
    )


def shifted_power_density(c: float, alpha: float, delta: Optional[float] = None,
                          circumradius: Optional[float] = None,
                          domain: Optional[Mesh] = None) -> ScalarField:
    """rho(x) = c + |x|^alpha; even with respect to every coordinate axis"""
    if c <= 0:
        raise FieldError(f"shifted power density needs c > 0, got {c}")
    base = power_density(alpha, delta, circumradius, domain)
    return ScalarField(
        name="shifted_power",
        evaluator=lambda x: c + base.evaluator(x),
        gradient=base.gradient,
        hessian=base.hessian,
        lower_bound=c + base.lower_bound,
        upper_bound=c + base.upper_bound,
        domain_guard=base.domain_guard,
        params={"c": c, **base.params},
    )


def _safe_power(radius: float, alpha: float) -> float:
    if radius == 0.0:
        return 0.0 if alpha > 0 else (1.0 if alpha == 0 else math.inf)
    if math.isinf(radius):
        return math.inf if alpha > 0 else (1.0 if alpha == 0 else 0.0)
    return radius**alpha


def _origin_guard(alpha: float, delta: Optional[float], domain: Optional[Mesh]) -> Optional[DomainGuard]:
    if delta is not None:
        if delta <= 0:
            raise FieldError(f"domain guard radius must be positive, got {delta}")
        return DomainGuard(float(delta))
    if _is_smooth_power(alpha):
        return None
    if domain is None:
        raise FieldError(f"|x|^{alpha} is singular at the origin; give delta or the domain mesh")
    return DomainGuard(origin_clearance(domain))


def quadratic_field(offset: float, scale: float, center: Optional[Sequence[float]] = None,
                    name: str = "quadratic") -> ScalarField:
    """offset + scale * |x - center|^2"""
    def shifted(x):
        return x if center is None else x - np.asarray(center, dtype=float)[:x.shape[1]]

    return ScalarField(
        name=name,
        evaluator=lambda x: offset + scale * np.einsum("ij,ij->i", shifted(x), shifted(x)),
        gradient=lambda x: 2.0 * scale * shifted(x),
        hessian=lambda x: np.broadcast_to(2.0 * scale * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy(),
        lower_bound=offset if scale >= 0 else -math.inf,
        upper_bound=math.inf if scale > 0 else offset,
        params={"offset": offset, "scale": scale, "center": None if center is None else list(center)},
    )


def quadratic_density(c: float, scale: float) -> ScalarField:
    return quadratic_field(c, scale, name="quadratic_density")


def quadratic_potential(center: Optional[Sequence[float]] = None, scale: float = 1.0) -> ScalarField:
    """V(x) = scale * |x - center|^2"""
    return quadratic_field(0.0, scale, center, name="quadratic_potential")


def gaussian_density(scale: float) -> ScalarField:
    """rho(x) = exp(scale * |x|^2)"""
    def value(x):
        return np.exp(scale * np.einsum("ij,ij->i", x, x))

    def gradient(x):
        return 2.0 * scale * value(x)[:, None] * x

    def hessian(x):
        d = x.shape[1]
        outer = np.einsum("ni,nj->nij", x, x)
        return value(x)[:, None, None] * (2.0 * scale * np.eye(d) + 4.0 * scale**2 * outer)

    return ScalarField(
        name="gaussian",
        evaluator=value,
        gradient=gradient,
        hessian=hessian,
        lower_bound=0.0 if scale < 0 else 1.0,
        upper_bound=1.0 if scale <= 0 else math.inf,
        params={"scale": scale},
    )


def polynomial_field(coefficients: Sequence[float], name: str = "polynomial") -> ScalarField:
    """1D field sum_k c_k x^k"""
    poly = Polynomial(coefficients)
    first = poly.deriv(1)
    second = poly.deriv(2)
    return ScalarField(
        name=name,
        evaluator=lambda x: poly(x[:, 0]),
        gradient=lambda x: first(x[:, 0])[:, None],
        hessian=lambda x: second(x[:, 0])[:, None, None],
        params={"coefficients": list(coefficients)},
    )


PROFILE_LIBRARY: Dict[str, Tuple[Callable, Callable, Callable]] = {
    "exp": (np.exp, np.exp, np.exp),
    "cosh": (np.cosh, np.sinh, np.cosh),
    "one_plus_square": (lambda t: 1 + t**2, lambda t: 2 * t, lambda t: 2 + 0 * t),
    "one_plus_half_sin_square": (
        lambda t: 1 + 0.5 * np.sin(t) ** 2,
        lambda t: 0.5 * np.sin(2 * t),
        lambda t: np.cos(2 * t),
    ),
    "linear": (lambda t: t, lambda t: 1 + 0 * t, lambda t: 0 * t),
    "constant": (lambda t: 1 + 0 * t, lambda t: 0 * t, lambda t: 0 * t),
}

# Range of each library profile over the real line
PROFILE_BOUNDS: Dict[str, Tuple[float, float]] = {
    "exp": (0.0, math.inf),
    "cosh": (1.0, math.inf),
    "one_plus_square": (1.0, math.inf),
    "one_plus_half_sin_square": (1.0, 1.5),
    "linear": (-math.inf, math.inf),
    "constant": (1.0, 1.0),
}


def directional_field(profile: Union[str, Callable], xi: Sequence[float],
                      profile_prime: Optional[Callable] = None,
                      profile_second: Optional[Callable] = None) -> ScalarField:
    """x -> profile(xi . x); constant along every direction orthogonal to xi"""
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise FieldError(f"direction xi must be a unit vector, got |xi| = {np.linalg.norm(xi):.6g}")

    label = profile if isinstance(profile, str) else getattr(profile, "__name__", "profile")
    bounds = PROFILE_BOUNDS.get(label, (-math.inf, math.inf))
    if isinstance(profile, str):
        if profile not in PROFILE_LIBRARY:
            raise FieldError(f"unknown profile '{profile}'; known: {sorted(PROFILE_LIBRARY)}")
        profile, profile_prime, profile_second = PROFILE_LIBRARY[profile]

    gradient = hessian = None
    if profile_prime is not None:
        def gradient(x):
            return np.asarray(profile_prime(x @ xi), dtype=float)[:, None] * xi
    if profile_second is not None:
        def hessian(x):
            return np.asarray(profile_second(x @ xi), dtype=float)[:, None, None] * np.outer(xi, xi)

    return ScalarField(
        name=f"directional_{label}",
        evaluator=lambda x: np.asarray(profile(x @ xi), dtype=float),
        gradient=gradient,
        hessian=hessian,
        lower_bound=bounds[0],
        upper_bound=bounds[1],
        params={"profile": label, "xi": xi.tolist()},
    )


def holomorphic_log_density(f: ComplexFunction, f_prime: ComplexFunction,
                            f_second: ComplexFunction, name: str,
                            delta: Optional[float] = None) -> ScalarField:
    """rho = exp(Re f(z)) for holomorphic f, so log rho is harmonic"""
    def value(x):
        return np.exp(np.real(f(to_complex(x))))

    def gradient(x):
        z = to_complex(x)
        d1 = f_prime(z)
        return value(x)[:, None] * np.column_stack([d1.real, -d1.imag])

    def hessian(x):
        z = to_complex(x)
        d1, d2 = f_prime(z), f_second(z)
        g = np.column_stack([d1.real, -d1.imag])
        second = np.stack([
            np.column_stack([d2.real, -d2.imag]),
            np.column_stack([-d2.imag, -d2.real]),
        ], axis=1)
        return value(x)[:, None, None] * (second + np.einsum("ni,nj->nij", g, g))

    return ScalarField(
        name=name,
        evaluator=value,
        gradient=gradient,
        hessian=hessian,
        lower_bound=0.0,
        domain_guard=None if delta is None else DomainGuard(delta),
        params={"delta": delta},
    )


def exp_inverse_density(delta: Optional[float] = None, domain: Optional[Mesh] = None) -> ScalarField:
    """rho(x1, x2) = exp(x1 / (x1^2 + x2^2)); log rho = Re(1/z); delta defaults from the domain"""
    if delta is None:
        if domain is None:
            raise FieldError("exp_inverse_density needs delta or the domain mesh")
        delta = origin_clearance(domain)
    elif domain is not None and delta > 2.0 * origin_clearance(domain):
        raise FieldError(f"guard radius {delta:.3g} exceeds the distance from the domain to the origin")
    if delta <= 0:
        raise FieldError(f"exp_inverse_density needs a positive guard radius, got {delta}")
    field_ = holomorphic_log_density(
        f=lambda z: 1.0 / z,
        f_prime=lambda z: -1.0 / z**2,
        f_second=lambda z: 2.0 / z**3,
        name="exp_inverse",
        delta=delta,
    )
    bound = 1.0 / delta
    return ScalarField(
        name=field_.name,
        evaluator=field_.evaluator,
        gradient=field_.gradient,
        hessian=field_.hessian,
        lower_bound=math.exp(-bound),
        upper_bound=math.exp(bound),
        domain_guard=field_.domain_guard,
        params={"delta": delta},
    )


def holomorphic_modulus_density(phi_prime: ComplexFunction, base_domain: Union[Mesh, np.ndarray],
                                phi_second: Optional[ComplexFunction] = None,
                                phi_third: Optional[ComplexFunction] = None,
                                name: str = "holomorphic_modulus",
                                delta: Optional[float] = None) -> ScalarField:
    """rho(x) = |phi'(x1 + i x2)|^2 for a conformal map phi"""
    samples = _domain_samples(base_domain)
    moduli = np.abs(phi_prime(to_complex(samples)))
    worst = int(np.argmin(moduli))
    if not np.isfinite(moduli).all() or moduli[worst] <= 1e-12 * max(moduli.max(), 1.0):
        raise FieldError(f"phi' vanishes near {samples[worst].tolist()}")

    gradient = hessian = None
    if phi_second is not None:
        def gradient(x):
            z = to_complex(x)
            product = phi_second(z) * np.conj(phi_prime(z))
            return 2.0 * np.column_stack([product.real, -product.imag])
    if phi_second is not None and phi_third is not None:
        def hessian(x):
            z = to_complex(x)
            w1 = phi_prime(z)
            w2 = phi_second(z)
            w3 = phi_third(z)
            product = w3 * np.conj(w1)
            curvature = np.abs(w2) ** 2
            h11 = 2.0 * product.real + 2.0 * curvature
            h22 = -2.0 * product.real + 2.0 * curvature
            h12 = -2.0 * product.imag
            return np.stack([np.column_stack([h11, h12]), np.column_stack([h12, h22])], axis=1)

    return ScalarField(
        name=name,
        evaluator=lambda x: np.abs(phi_prime(to_complex(x))) ** 2,
        gradient=gradient,
        hessian=hessian,
        lower_bound=float(moduli.min() ** 2),
        upper_bound=float(moduli.max() ** 2),
        domain_guard=None if delta is None else DomainGuard(delta),
        params={"sampled_min_modulus": float(moduli.min())},
    )


def _domain_samples(base_domain: Union[Mesh, np.ndarray]) -> np.ndarray:
    if isinstance(base_domain, Mesh):
        return np.vstack([base_domain.nodes, base_domain.element_centroids])
    return as_points(base_domain, 2)


def origin_clearance(mesh: Mesh) -> float:
    """Half the distance from the domain's convex hull to the origin"""
    if mesh.dimension == 1:
        a, b = float(mesh.nodes.min()), float(mesh.nodes.max())
        distance = 0.0 if a <= 0.0 <= b else min(abs(a), abs(b))
    else:
        distance = MultiPoint(mesh.nodes.tolist()).convex_hull.distance(Point(0.0, 0.0))
    if distance <= 0.0:
        raise FieldError("domain contains the origin; origin-singular densities are not admissible")
    return 0.5 * float(distance)


# ---------------------------------------------------------------------------
# Matrix fields
# ---------------------------------------------------------------------------

def spd_sqrt(matrices: np.ndarray) -> np.ndarray:
    """Principal square root of 2x2 SPD matrices: (A + sqrt(det) I) / sqrt(tr + 2 sqrt(det))"""
    matrices = np.asarray(matrices, dtype=float)
    det = matrices[..., 0, 0] * matrices[..., 1, 1] - matrices[..., 0, 1] * matrices[..., 1, 0]
    trace = matrices[..., 0, 0] + matrices[..., 1, 1]
    if (det <= 0).any() or (trace <= 0).any():
        raise FieldError("matrix sample is not positive definite")
    root_det = np.sqrt(det)
    return (matrices + root_det[..., None, None] * np.eye(2)) / np.sqrt(trace + 2 * root_det)[..., None, None]


def spd_inverse_sqrt(matrices: np.ndarray) -> np.ndarray:
    return np.linalg.inv(spd_sqrt(matrices))


def constant_matrix_field(matrix: Sequence[Sequence[float]], name: str = "constant_matrix") -> MatrixField:
    matrix = np.asarray(matrix, dtype=float)
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise FieldError("constant matrix is not symmetric")
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    if eigenvalues[0] <= 0:
        raise FieldError(f"constant matrix is not positive definite (eigenvalue {eigenvalues[0]:.4g})")
    pairs = tuple((float(v), tuple(_canonical_sign(eigenvectors[:, i]).tolist()))
                  for i, v in enumerate(eigenvalues))
    d = matrix.shape[0]
    return MatrixField(
        name=name,
        evaluator=lambda x: np.broadcast_to(matrix, (x.shape[0], d, d)),
        ellipticity_c=float(eigenvalues[0]),
        dimension=d,
        constant_pairs=pairs,
        params={"matrix": matrix.tolist()},
    )


def identity_matrix_field(dimension: int = 2) -> MatrixField:
    return constant_matrix_field(np.eye(dimension), name="identity")


def block_matrix_field(constant_block: Union[float, Sequence[Sequence[float]]],
                       varying_block: Optional[ScalarField] = None) -> MatrixField:
    """diag(c, a22(x)) with constant leading block, or a constant SPD 2x2 matrix"""
    block = np.atleast_2d(np.asarray(constant_block, dtype=float))
    if block.shape == (2, 2):
        if varying_block is not None:
            raise FieldError("a 2x2 constant block leaves no room for a varying block in 2D")
        return constant_matrix_field(block, name="block_constant")
    if block.shape != (1, 1):
        raise FieldError(f"constant block must be a scalar or 2x2, got shape {block.shape}")

    leading = float(block[0, 0])
    if leading <= 0:
        raise FieldError(f"constant block is indefinite (value {leading})")
    if varying_block is None:
        raise FieldError("a scalar constant block needs a varying block")
    if varying_block.lower_bound <= 0:
        raise FieldError(f"varying block {varying_block.name} lacks a positive lower bound")

    def evaluator(x):
        values = np.zeros((x.shape[0], 2, 2))
        values[:, 0, 0] = leading
        values[:, 1, 1] = varying_block.evaluate(x)
        return values

    return MatrixField(
        name=f"block_diag({leading},{varying_block.name})",
        evaluator=evaluator,
        ellipticity_c=min(leading, varying_block.lower_bound),
        dimension=2,
        constant_pairs=((leading, (1.0, 0.0)),),
        params={"leading": leading, "varying": varying_block.name, **varying_block.params},
    )


def rotating_matrix_field(eigenvalues: Sequence[float] = (1.0, 2.0), rate: float = 1.0) -> MatrixField:
    """R(rate * x1) diag(eigenvalues) R(rate * x1)^T; no constant eigenvector"""
    low, high = (float(v) for v in eigenvalues)
    if min(low, high) <= 0:
        raise FieldError("rotating matrix field needs positive eigenvalues")

    def evaluator(x):
        angle = rate * x[:, 0]
        c, s = np.cos(angle), np.sin(angle)
        values = np.empty((x.shape[0], 2, 2))
        values[:, 0, 0] = low * c**2 + high * s**2
        values[:, 1, 1] = low * s**2 + high * c**2
        values[:, 0, 1] = values[:, 1, 0] = (low - high) * c * s
        return values

    return MatrixField(
        name="rotating",
        evaluator=evaluator,
        ellipticity_c=min(low, high),
        dimension=2,
        params={"eigenvalues": [low, high], "rate": rate},
    )


def _canonical_sign(vector: np.ndarray) -> np.ndarray:
    pivot = vector[np.argmax(np.abs(vector))]
    return vector if pivot >= 0 else -vector


# ---------------------------------------------------------------------------
# Harmonic phase
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HarmonicPhase:
    """Nodal data of h with rho = |grad h|^2, plus path-integration diagnostics"""
    field: ScalarField
    nodal_values: np.ndarray
    conjugate_values: np.ndarray
    primitive_values: np.ndarray
    closure_residual: float
    log_harmonic_residual: float
    density: ScalarField
    mesh: Mesh

    def rotated(self, theta: float) -> ScalarField:
        """h_theta = Re(exp(i theta) Psi); every rotation keeps |grad h_theta|^2 = rho"""
        return _phase_field(self.density, self.mesh, self.primitive_values, self.conjugate_values,
                            self.closure_residual, rotation=theta)


def _path_integrals(rho: ScalarField, starts: np.ndarray, ends: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Simpson integrals along segments of the conjugate increment and of exp(phi/2) dz"""
    log_rho = log_field(rho)
    d = ends - starts

    def conjugate_rate(t):
        grad = log_rho.grad(starts + t * d)
        # d(conjugate) = -g_y dx + g_x dy
        return -grad[:, 1] * d[:, 0] + grad[:, 0] * d[:, 1]

    r0, r25, r50, r75, r100 = (conjugate_rate(t) for t in (0.0, 0.25, 0.5, 0.75, 1.0))
    half = (r0 + 4 * r25 + r50) / 12.0
    full = half + (r50 + 4 * r75 + r100) / 12.0

    dz = d[:, 0] + 1j * d[:, 1]
    g0 = log_rho.evaluate(starts)
    g50 = log_rho.evaluate(starts + 0.5 * d)
    g100 = log_rho.evaluate(ends)
    e0 = np.exp(0.5 * g0)
    e50 = np.exp(0.5 * (g50 + 1j * half))
    e100 = np.exp(0.5 * (g100 + 1j * full))
    return full, dz * (e0 + 4 * e50 + e100) / 6.0


def construct_harmonic_phase(rho: ScalarField, basepoint: Sequence[float], mesh: Mesh,
                             tolerance: Optional[float] = None) -> HarmonicPhase:
    """
    Build h with |grad h|^2 = rho for a log-harmonic density

    g = log rho gets a harmonic conjugate by integrating the Cauchy-Riemann
    equations along a breadth-first spanning tree of the mesh edges. With
    phi = g + i g~ the primitive Psi of exp(phi / 2) is integrated the same
    way and h is its real part. The tree is rooted at the node nearest the
    basepoint, and the root carries the segment integrals from the basepoint
    to that node, so the additive constant of h is fixed by h(basepoint) = 0
    rather than by a zero at the root node.
    """
    if mesh.dimension != 2:
        raise FieldError("harmonic phases are constructed on 2D meshes only")
    if mesh.euler_characteristic != 1:
        raise FieldError(
            f"mesh is not simply connected (Euler characteristic {mesh.euler_characteristic})"
        )
    tolerance = config.fd_tolerance if tolerance is None else tolerance
    residual = float(np.abs(scaled_log_laplacian(rho, mesh.element_centroids)).max())
    if residual > tolerance:
        raise FieldError(f"density {rho.name} is not log-harmonic (residual {residual:.3e})")

    basepoint = np.asarray(basepoint, dtype=float)
    root = int(np.argmin(np.linalg.norm(mesh.nodes - basepoint, axis=1)))
    edges = mesh.edges
    n = mesh.n_nodes
    graph = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    order, predecessors = breadth_first_order(graph, root, directed=False, return_predecessors=True)
    if len(order) != n:
        raise FieldError("mesh edge graph is disconnected")

    children = order[1:]
    parents = predecessors[children]
    conj_increment, primitive_increment = _path_integrals(rho, mesh.nodes[parents], mesh.nodes[children])

    conjugate = np.zeros(n)
    primitive = np.zeros(n, dtype=complex)
    if not np.allclose(mesh.nodes[root], basepoint):
        root_conj, root_primitive = _path_integrals(rho, basepoint[None, :], mesh.nodes[[root]])
        conjugate[root] = root_conj[0]
        primitive[root] = root_primitive[0]
    # breadth-first order visits every parent before its children
    for child, parent, inc in zip(children, parents, conj_increment):
        conjugate[child] = conjugate[parent] + inc
    primitive_increment = primitive_increment * np.exp(0.5j * conjugate[parents])
    for child, parent, inc in zip(children, parents, primitive_increment):
        primitive[child] = primitive[parent] + inc

    forward, _ = _path_integrals(rho, mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]])
    closure = float(np.abs(conjugate[edges[:, 1]] - conjugate[edges[:, 0]] - forward).max())

    logger.info(
        f"🌀 Harmonic phase on {n} nodes: log-harmonic residual {residual:.2e}, "
        f"cycle closure residual {closure:.2e}"
    )
    return HarmonicPhase(
        field=_phase_field(rho, mesh, primitive, conjugate, closure),
        nodal_values=primitive.real.copy(),
        conjugate_values=conjugate,
        primitive_values=primitive,
        closure_residual=closure,
        log_harmonic_residual=residual,
        density=rho,
        mesh=mesh,
    )


def _phase_field(rho: ScalarField, mesh: Mesh, primitive: np.ndarray, conjugate: np.ndarray,
                 closure: float, rotation: float = 0.0) -> ScalarField:
    tree = cKDTree(mesh.nodes)
    log_rho = log_field(rho)
    w = np.exp(1j * rotation)

    def anchored(x):
        _, nearest = tree.query(x)
        conj_inc, segment = _path_integrals(rho, mesh.nodes[nearest], x)
        return nearest, conj_inc, segment

    def evaluator(x):
        nearest, _, segment = anchored(x)
        psi = primitive[nearest] + np.exp(0.5j * conjugate[nearest]) * segment
        return np.real(w * psi)

    def psi_prime(x):
        nearest, conj_inc, _ = anchored(x)
        return w * np.exp(0.5 * (log_rho.evaluate(x) + 1j * (conjugate[nearest] + conj_inc)))

    def gradient(x):
        d = psi_prime(x)
        return np.column_stack([d.real, -d.imag])

    def hessian(x):
        grad_g = log_rho.grad(x)
        second = psi_prime(x) * 0.5 * (grad_g[:, 0] - 1j * grad_g[:, 1])
        return np.stack([
            np.column_stack([second.real, -second.imag]),
            np.column_stack([-second.imag, -second.real]),
        ], axis=1)

    return ScalarField(
        name=f"harmonic_phase({rho.name})",
        evaluator=evaluator,
        gradient=gradient,
        hessian=hessian,
        domain_guard=rho.domain_guard,
        params={"density": rho.name, "closure_residual": closure, "mesh_id": mesh.mesh_id,
                "rotation": rotation},
    )


def linear_phase(direction: Sequence[float], basepoint: Optional[Sequence[float]] = None) -> ScalarField:
    """h(x) = e . (x - basepoint), the phase of a constant density"""
    e = np.asarray(direction, dtype=float)
    x0 = np.zeros_like(e) if basepoint is None else np.asarray(basepoint, dtype=float)
    return ScalarField(
        name="linear_phase",
        evaluator=lambda x: (x - x0) @ e,
        gradient=lambda x: np.broadcast_to(e, x.shape).copy(),
        hessian=lambda x: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
        params={"direction": e.tolist()},
    )


def saddle_phase(rotation: float = 0.0) -> ScalarField:
    """h = Re(exp(i theta) z^2 / 2); theta = 0 gives (x1^2 - x2^2) / 2 with |grad h|^2 = |x|^2"""
    w = np.exp(1j * rotation)

    def value(x):
        return np.real(w * to_complex(x) ** 2 / 2.0)

    def gradient(x):
        d = w * to_complex(x)
        return np.column_stack([d.real, -d.imag])

    def hessian(x):
        n = x.shape[0]
        block = np.array([[w.real, -w.imag], [-w.imag, -w.real]])
        return np.broadcast_to(block, (n, 2, 2)).copy()

    return ScalarField(
        name="saddle_phase",
        evaluator=value,
        gradient=gradient,
        hessian=hessian,
        params={"rotation": rotation},
    )


def paraboloid_phase() -> ScalarField:
    """h = |x|^2 / 2, not harmonic"""
    return quadratic_field(0.0, 0.5, name="paraboloid_phase")


# ---------------------------------------------------------------------------
# Test functions vanishing on the boundary
# ---------------------------------------------------------------------------

def sine_product_field(box: Sequence[float]) -> ScalarField:
    """prod_i sin(pi (x_i - a_i) / (b_i - a_i)) on the box [a_1, b_1] x [a_2, b_2]"""
    x0, y0, x1, y1 = (float(v) for v in box)
    if x1 <= x0 or y1 <= y0:
        raise FieldError(f"degenerate box {list(box)}")
    kx, ky = math.pi / (x1 - x0), math.pi / (y1 - y0)

    def parts(x):
        ax, ay = kx * (x[:, 0] - x0), ky * (x[:, 1] - y0)
        return np.sin(ax), np.cos(ax), np.sin(ay), np.cos(ay)

    def value(x):
        sx, _, sy, _ = parts(x)
        return sx * sy

    def gradient(x):
        sx, cx, sy, cy = parts(x)
        return np.column_stack([kx * cx * sy, ky * sx * cy])

    def hessian(x):
        sx, cx, sy, cy = parts(x)
        out = np.empty((x.shape[0], 2, 2))
        out[:, 0, 0] = -kx**2 * sx * sy
        out[:, 1, 1] = -ky**2 * sx * sy
        out[:, 0, 1] = out[:, 1, 0] = kx * ky * cx * cy
        return out

    return ScalarField(
        name="sine_product",
        evaluator=value,
        gradient=gradient,
        hessian=hessian,
        lower_bound=-1.0,
        upper_bound=1.0,
        params={"box": [x0, y0, x1, y1]},
    )


def disk_bubble_field(center: Sequence[float], radius: float) -> ScalarField:
    """1 - |x - center|^2 / R^2, zero on the circle"""
    if radius <= 0:
        raise FieldError(f"disk radius must be positive, got {radius}")
    return quadratic_field(1.0, -1.0 / radius**2, center, name="disk_bubble")
