"""
Numerical checks of the sufficient conditions on (rho, V, A, domain)

Every checker returns a ConditionReport; a failing condition is a result,
never an exception. Exceptions are reserved for unusable inputs.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from scipy.stats import qmc
from shapely.geometry import Polygon

from .config import config
from .errors import DomainGuardError, FieldError
from .fields import (
    MatrixField,
    ScalarField,
    as_points,
    constant_field,
    scaled_log_laplacian,
    spd_inverse_sqrt,
    spd_sqrt,
)
from .geometry import Mesh

logger = logging.getLogger(__name__)


@dataclass
class ConditionReport:
    """Outcome of one hypothesis check"""
    condition_name: str
    passed: bool
    max_residual: float
    sample_count: int
    tolerance: float
    witness: List[float]
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition_name": self.condition_name,
            "passed": self.passed,
            "max_residual": self.max_residual,
            "sample_count": self.sample_count,
            "tolerance": self.tolerance,
            "witness": self.witness,
            "details": self.details,
        }


def _report(name: str, residuals: np.ndarray, points: np.ndarray, tolerance: float,
            **details) -> ConditionReport:
    worst = int(np.argmax(residuals))
    max_residual = float(residuals[worst])
    report = ConditionReport(
        condition_name=name,
        passed=bool(max_residual <= tolerance),
        max_residual=max_residual,
        sample_count=int(points.shape[0]),
        tolerance=tolerance,
        witness=points[worst].tolist(),
        details=details,
    )
    status = "✅" if report.passed else "❌"
    logger.info(f"{status} {name}: max residual {max_residual:.3e} (tolerance {tolerance:.1e})")
    return report


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_points(mesh: Mesh, count: Optional[int] = None, include_centroids: bool = True) -> np.ndarray:
    """Unscrambled Halton points strictly inside the domain, then element centroids"""
    count = config.sample_count if count is None else count
    low = mesh.nodes.min(axis=0)
    high = mesh.nodes.max(axis=0)
    sampler = qmc.Halton(d=mesh.dimension, scramble=False)

    if mesh.dimension == 1:
        candidates = qmc.scale(sampler.random(count + 1), low, high)
        inside = candidates[(candidates[:, 0] > low[0]) & (candidates[:, 0] < high[0])][:count]
    else:
        region = Polygon(mesh.outline)
        collected = []
        total = 0
        while total < count:
            batch = qmc.scale(sampler.random(2 * count), low, high)
            keep = batch[shapely.contains_xy(region, batch[:, 0], batch[:, 1])]
            collected.append(keep)
            total += keep.shape[0]
        inside = np.vstack(collected)[:count]

    if include_centroids:
        return np.vstack([inside, mesh.element_centroids])
    return inside


def _zero_if_missing(f: Optional[ScalarField]) -> ScalarField:
    return constant_field(0.0, name="zero") if f is None else f


def directional_difference(f: ScalarField, points: np.ndarray, direction: np.ndarray,
                           step: Optional[float] = None) -> np.ndarray:
    """Central difference of f along a unit direction"""
    if step is None:
        span = float(np.linalg.norm(np.ptp(points, axis=0))) if points.shape[0] > 1 else 1.0
        step = config.fd_relative_step * max(span, 1.0)
    offset = step * direction
    return (f.evaluate(points + offset) - f.evaluate(points - offset)) / (2 * step)


# ---------------------------------------------------------------------------
# Checkers
# ---------------------------------------------------------------------------

def check_convexity_combination(rho: ScalarField, V: Optional[ScalarField], lambda1: float,
                                points, tolerance: Optional[float] = None,
                                directions: Optional[Sequence[Sequence[float]]] = None,
                                allow_finite_differences: bool = True) -> ConditionReport:
    """Smallest eigenvalue of D^2(lambda1 rho - V), optionally restricted to a subspace"""
    points = as_points(points)
    V = _zero_if_missing(V)
    analytic = rho.hessian is not None and V.hessian is not None
    if not analytic and not allow_finite_differences:
        missing = rho.name if rho.hessian is None else V.name
        raise FieldError(f"field {missing} has no analytic Hessian")
    if tolerance is None:
        tolerance = config.analytic_tolerance if analytic else config.fd_tolerance

    hessian = lambda1 * rho.hess(points) - V.hess(points)
    if directions is not None:
        basis, _ = np.linalg.qr(np.asarray(directions, dtype=float).T)
        hessian = np.einsum("ia,nij,jb->nab", basis, hessian, basis)
    smallest = np.linalg.eigvalsh(hessian)[:, 0]

    strict = smallest > tolerance
    name = "convexity_combination" if directions is None else "directional_convexity"
    return _report(
        name,
        np.maximum(0.0, -smallest),
        points,
        tolerance,
        lambda1=lambda1,
        min_eigenvalue=float(smallest.min()),
        strictly_convex_somewhere=bool(strict.any()),
        strict_witness=points[int(np.argmax(smallest))].tolist(),
        analytic_hessians=analytic,
        subspace_dimension=None if directions is None else len(directions),
    )


def check_strict_convexity_or_curvature(rho: ScalarField, V: Optional[ScalarField], lambda1: float,
                                        mesh: Mesh, points,
                                        tolerance: Optional[float] = None) -> ConditionReport:
    """Positive definite Hessian on a ball, or a strictly curved (exact circle) boundary"""
    convexity = check_convexity_combination(rho, V, lambda1, points, tolerance)
    strict_hessian = convexity.details["strictly_convex_somewhere"]
    curved = mesh.circle is not None
    passed = convexity.passed and (strict_hessian or curved)
    report = ConditionReport(
        condition_name="strict_convexity_or_curvature",
        passed=passed,
        max_residual=convexity.max_residual,
        sample_count=convexity.sample_count,
        tolerance=convexity.tolerance,
        witness=convexity.details["strict_witness"] if strict_hessian else convexity.witness,
        details={
            "positive_definite_somewhere": strict_hessian,
            "strictly_curved_boundary": curved,
        },
    )
    logger.info(f"{'✅' if passed else '❌'} strict_convexity_or_curvature")
    return report


def check_directional_invariance(rho: ScalarField, V: Optional[ScalarField],
                                 basis: Sequence[Sequence[float]], points,
                                 tolerance: Optional[float] = None) -> ConditionReport:
    """d_b rho = d_b V = 0 for every b in the basis; r counts independent passing directions"""
    if len(basis) == 0:
        raise FieldError("directional invariance needs at least one direction")
    points = as_points(points)
    V = _zero_if_missing(V)
    tolerance = config.fd_tolerance if tolerance is None else tolerance

    residuals = np.zeros(points.shape[0])
    passing = []
    per_direction = []
    for b in basis:
        b = np.asarray(b, dtype=float)
        norm = np.linalg.norm(b)
        if norm == 0:
            raise FieldError("directional invariance got a zero direction")
        b = b / norm
        residual = np.maximum(
            np.abs(directional_difference(rho, points, b)),
            np.abs(directional_difference(V, points, b)),
        )
        per_direction.append(float(residual.max()))
        residuals = np.maximum(residuals, residual)
        if residual.max() <= tolerance:
            passing.append(b)

    rank = int(np.linalg.matrix_rank(np.array(passing))) if passing else 0
    return _report(
        "directional_invariance",
        residuals,
        points,
        tolerance,
        invariant_dimension=rank,
        per_direction_residual=per_direction,
    )


def check_log_harmonic(rho: ScalarField, points, tolerance: Optional[float] = None) -> ConditionReport:
    """Delta log rho = 0, relative to the magnitude of its second differences"""
    points = as_points(points, 2)
    tolerance = config.fd_tolerance if tolerance is None else tolerance
    if (rho.evaluate(points) <= 0).any():
        raise FieldError(f"density {rho.name} is not positive at every sample")
    residuals = scaled_log_laplacian(rho, points)
    return _report("log_harmonic", np.abs(residuals), points, tolerance)


def check_log_subharmonic(rho: ScalarField, points, tolerance: Optional[float] = None) -> ConditionReport:
    """-Delta log rho <= 0"""
    points = as_points(points, 2)
    tolerance = config.fd_tolerance if tolerance is None else tolerance
    residuals = scaled_log_laplacian(rho, points)
    return _report("log_subharmonic", np.maximum(0.0, -residuals), points, tolerance,
                   min_scaled_laplacian=float(residuals.min()))


def check_harmonic_gradient(h: ScalarField, rho: ScalarField, points,
                            tolerance: Optional[float] = None) -> ConditionReport:
    """Delta h = 0 and |grad h|^2 = rho"""
    points = as_points(points)
    tolerance = config.fd_tolerance if tolerance is None else tolerance
    laplacian = np.abs(np.trace(h.hess(points), axis1=1, axis2=2))
    gradient = h.grad(points)
    density = rho.evaluate(points)
    mismatch = np.abs(np.einsum("ij,ij->i", gradient, gradient) - density) / np.maximum(1.0, density)
    return _report(
        "harmonic_gradient",
        np.maximum(laplacian, mismatch),
        points,
        tolerance,
        max_laplacian=float(laplacian.max()),
        max_density_mismatch=float(mismatch.max()),
    )


def check_constant_eigenpair(A: MatrixField, points,
                             tolerance: Optional[float] = None) -> Tuple[ConditionReport, List[Tuple[float, List[float]]]]:
    """Eigenpairs (lambda, xi) of A with A(x) xi = lambda xi at every sample"""
    points = as_points(points, A.dimension)
    tolerance = config.analytic_tolerance if tolerance is None else tolerance
    matrices = A.evaluate(points)
    reference_point = points.mean(axis=0)
    reference = A.evaluate(reference_point[None, :])[0]

    values, vectors = np.linalg.eigh(reference)
    scale = max(abs(values).max(), 1.0)
    if np.ptp(values) <= 1e-12 * scale:
        # repeated eigenvalue at the reference: borrow directions from a sample where it splits
        spreads = np.ptp(np.linalg.eigvalsh(matrices), axis=1)
        split = int(np.argmax(spreads))
        if spreads[split] > 1e-12 * scale:
            _, vectors = np.linalg.eigh(matrices[split])
        else:
            vectors = np.eye(A.dimension)

    pairs = []
    candidate_residuals = []
    per_point = None
    for i in range(vectors.shape[1]):
        xi = vectors[:, i]
        xi = xi if xi[np.argmax(np.abs(xi))] >= 0 else -xi
        lam = float(xi @ reference @ xi)
        residual = np.linalg.norm(matrices @ xi - lam * xi, axis=1)
        candidate_residuals.append(float(residual.max()))
        if residual.max() <= tolerance:
            pairs.append((lam, xi.tolist()))
        if per_point is None or residual.max() < per_point.max():
            per_point = residual

    report = _report(
        "constant_eigenpair",
        per_point,
        points,
        tolerance,
        pairs=[{"eigenvalue": lam, "eigenvector": xi} for lam, xi in pairs],
        candidate_residuals=candidate_residuals,
    )
    report.passed = bool(pairs)
    return report, pairs


def check_div_curl_conditions(A: MatrixField, xi: Callable[[np.ndarray], np.ndarray], mesh: Mesh,
                              tolerance: Optional[float] = None) -> ConditionReport:
    """|xi| = 1, div(A^(1/2) xi) = 0 and curl(A^(-1/2) xi) = 0 at element centroids"""
    points = mesh.element_centroids
    tolerance = config.fd_tolerance if tolerance is None else tolerance
    step = config.fd_relative_step * mesh.diameter

    def root_field(x):
        return np.einsum("nij,nj->ni", spd_sqrt(A.evaluate(x)), xi(x))

    def inverse_root_field(x):
        return np.einsum("nij,nj->ni", spd_inverse_sqrt(A.evaluate(x)), xi(x))

    def partial(func, axis):
        offset = np.zeros(2)
        offset[axis] = step
        return (func(points + offset) - func(points - offset)) / (2 * step)

    unit = np.abs(np.linalg.norm(xi(points), axis=1) - 1.0)
    divergence = np.abs(partial(root_field, 0)[:, 0] + partial(root_field, 1)[:, 1])
    curl = np.abs(partial(inverse_root_field, 0)[:, 1] - partial(inverse_root_field, 1)[:, 0])
    return _report(
        "div_curl",
        np.maximum.reduce([unit, divergence, curl]),
        points,
        tolerance,
        max_unit_defect=float(unit.max()),
        max_divergence=float(divergence.max()),
        max_curl=float(curl.max()),
    )


def check_axis_symmetry(domain: Union[Mesh, np.ndarray], rho: ScalarField, V: Optional[ScalarField],
                        points, tolerance: Optional[float] = None) -> ConditionReport:
    """Evenness of rho and V under each coordinate reflection, and a reflection-invariant vertex set"""
    points = as_points(points)
    V = _zero_if_missing(V)
    tolerance = config.analytic_tolerance if tolerance is None else tolerance
    vertices = domain.outline if isinstance(domain, Mesh) else np.asarray(domain, dtype=float)
    scale = max(float(np.abs(vertices).max()), 1.0)

    residuals = np.zeros(points.shape[0])
    vertex_symmetric = True
    for axis in range(points.shape[1]):
        flip = np.ones(points.shape[1])
        flip[axis] = -1.0
        mirrored = points * flip
        try:
            residual = np.maximum(
                np.abs(rho.evaluate(points) - rho.evaluate(mirrored)),
                np.abs(V.evaluate(points) - V.evaluate(mirrored)),
            )
        except DomainGuardError:
            residual = np.full(points.shape[0], math.inf)
        residuals = np.maximum(residuals, residual)

        reflected = vertices * flip
        gaps = np.linalg.norm(reflected[:, None, :] - vertices[None, :, :], axis=2).min(axis=1)
        vertex_symmetric &= bool(gaps.max() <= 1e-12 * scale)

    report = _report("axis_symmetry", residuals, points, tolerance, vertex_set_symmetric=vertex_symmetric)
    report.passed = report.passed and vertex_symmetric
    return report
