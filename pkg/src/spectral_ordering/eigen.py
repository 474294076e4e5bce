"""
Generalized symmetric eigensolvers for K x = lambda M x

Dense Cholesky reduction for small systems, shift-invert Lanczos (ARPACK)
for large ones, a finite-difference oracle for 1D problems and Richardson
extrapolation over nested meshes.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.optimize import linear_sum_assignment
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .config import config
from .errors import ConvergenceError, EigenSolverError, MassMatrixError
from .fem import BoundaryCondition, FEFunction, OperatorPair
from .fields import CoefficientSet
from .geometry import Mesh, prolongation

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending eigenvalues with M-orthonormal eigenvectors (columns)"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    bc_tag: BoundaryCondition
    mesh_size_h: float
    residuals: np.ndarray
    dof_map: np.ndarray = field(repr=False)
    mesh: Optional[Mesh] = field(default=None, repr=False)
    solver: str = "dense"
    error_estimates: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def cluster_ids(self) -> np.ndarray:
        return cluster_eigenvalues(self.eigenvalues)

    def eigenfunction(self, index: int) -> FEFunction:
        if self.mesh is None:
            raise EigenSolverError("grid spectra carry no mesh; use eigenvectors directly")
        return FEFunction(self.eigenvectors[:, index], self.mesh, self.dof_map, self.bc_tag)

    def nodal_vectors(self) -> np.ndarray:
        """Eigenvectors zero-extended to every mesh node"""
        n_nodes = self.mesh.n_nodes if self.mesh is not None else self.dof_map.max() + 1
        full = np.zeros((n_nodes, self.count))
        full[self.dof_map] = self.eigenvectors
        return full

    def to_dict(self) -> dict:
        return {
            "bc": self.bc_tag.value,
            "mesh_size_h": self.mesh_size_h,
            "solver": self.solver,
            "eigenvalues": self.eigenvalues.tolist(),
            "residuals": self.residuals.tolist(),
            "cluster_ids": self.cluster_ids.tolist(),
            "error_estimates": None if self.error_estimates is None else self.error_estimates.tolist(),
        }


@dataclass(frozen=True)
class ExtrapolatedValue:
    """Richardson-extrapolated eigenvalue with the raw nested-mesh values"""
    value: float
    error_estimate: float
    observed_order: Optional[float]
    raw_values: List[float]
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "error_estimate": self.error_estimate,
            "observed_order": self.observed_order,
            "raw_values": list(self.raw_values),
            "flagged": self.flagged,
        }


def cluster_eigenvalues(eigenvalues: Sequence[float], rtol: Optional[float] = None) -> np.ndarray:
    """Consecutive ascending eigenvalues within a relative tolerance share a cluster id"""
    rtol = config.cluster_rtol if rtol is None else rtol
    values = np.asarray(eigenvalues, dtype=float)
    ids = np.zeros(values.shape[0], dtype=int)
    for i in range(1, values.shape[0]):
        scale = max(abs(values[i]), abs(values[i - 1]))
        same = values[i] - values[i - 1] <= rtol * scale + 1e-12
        ids[i] = ids[i - 1] if same else ids[i - 1] + 1
    return ids


def spectral_shift(pair: OperatorPair) -> float:
    """
    Shift strictly below the lowest eigenvalue of the pencil (K, M)

    Gershgorin bounds K from below; when that bound is negative it is
    divided by half the smallest mass diagonal, which bounds the spectrum
    of the P1 consistent mass from below. One is then subtracted, so a
    pencil with a non-negative bound gets sigma = -1.
    """
    K = pair.K.tocsr()
    diagonal = K.diagonal()
    off = np.asarray(abs(K).sum(axis=1)).ravel() - np.abs(diagonal)
    gershgorin = float((diagonal - off).min())
    mass_floor = 0.5 * float(pair.M.diagonal().min())
    return min(0.0, gershgorin / mass_floor) - 1.0


def _start_vector(pair: OperatorPair) -> np.ndarray:
    coords = pair.mesh.nodes[pair.dof_map]
    weights = np.array([1.0, 0.61803398875, 0.41421356237])[:coords.shape[1]]
    linear = coords @ weights
    return 1.0 + linear + 0.5 * linear**2 + 0.25 * np.einsum("ij,ij->i", coords, coords)


def _finalize(K, M, eigenvalues: np.ndarray, vectors: np.ndarray):
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    vectors = vectors[:, order]

    norms = np.sqrt(np.einsum("ij,ij->j", vectors, M @ vectors))
    vectors = vectors / norms
    pivots = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(vectors.shape[1])]
    vectors = vectors * np.where(pivots < 0, -1.0, 1.0)

    mass_action = M @ vectors
    residuals = np.linalg.norm(K @ vectors - mass_action * eigenvalues, axis=0) / np.linalg.norm(
        mass_action, axis=0
    )
    return eigenvalues, vectors, residuals


def _solve_dense(pair: OperatorPair, count: int):
    K = pair.K.toarray()
    M = pair.M.toarray()
    try:
        lower = scipy.linalg.cholesky(M, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise MassMatrixError(f"mass matrix is not positive definite: {exc}") from exc
    half = scipy.linalg.solve_triangular(lower, K, lower=True)
    standard = scipy.linalg.solve_triangular(lower, half.T, lower=True)
    standard = 0.5 * (standard + standard.T)
    eigenvalues, y = scipy.linalg.eigh(standard, subset_by_index=[0, count - 1])
    vectors = scipy.linalg.solve_triangular(lower.T, y, lower=False)
    return eigenvalues, vectors


def _solve_shift_invert(pair: OperatorPair, count: int):
    sigma = spectral_shift(pair)
    shifted = (pair.K - sigma * pair.M).tocsc()
    try:
        factor = splu(shifted)
    except RuntimeError as exc:
        raise MassMatrixError(f"shifted pencil could not be factorized: {exc}") from exc
    inverse = LinearOperator(shifted.shape, matvec=factor.solve, dtype=float)
    try:
        eigenvalues, vectors = eigsh(
            pair.K, k=count, M=pair.M, sigma=sigma, which="LM", OPinv=inverse,
            v0=_start_vector(pair), maxiter=config.arpack_maxiter,
        )
    except ArpackNoConvergence as exc:
        residuals = []
        if exc.eigenvalues is not None and len(exc.eigenvalues):
            _, _, partial = _finalize(pair.K, pair.M, exc.eigenvalues, exc.eigenvectors)
            residuals = partial.tolist()
        raise ConvergenceError(f"shift-invert iteration did not converge: {exc}", residuals) from exc

    # Re-orthonormalize in the M inner product; clustered pairs lose orthogonality in Lanczos
    gram = vectors.T @ (pair.M @ vectors)
    lower = np.linalg.cholesky(0.5 * (gram + gram.T))
    vectors = scipy.linalg.solve_triangular(lower, vectors.T, lower=True).T
    return eigenvalues, vectors


def solve_lowest(pair: OperatorPair, count: int, method: Optional[str] = None) -> Spectrum:
    """Lowest `count` eigenpairs of the pencil (K, M)"""
    n = pair.n_dofs
    if count < 1 or count > n:
        raise EigenSolverError(f"requested {count} eigenpairs of a {n}-dimensional pencil")

    if method is None:
        method = "dense" if n <= config.dense_threshold or count >= n - 1 else "shift-invert"
    if method == "dense":
        eigenvalues, vectors = _solve_dense(pair, count)
    elif method == "shift-invert":
        eigenvalues, vectors = _solve_shift_invert(pair, count)
    else:
        raise EigenSolverError(f"unknown eigensolver method '{method}'")

    eigenvalues, vectors, residuals = _finalize(pair.K, pair.M, eigenvalues, vectors)
    if residuals.max() > config.residual_tolerance:
        raise ConvergenceError(
            f"eigenpair residual {residuals.max():.2e} exceeds {config.residual_tolerance:.0e}",
            residuals.tolist(),
        )

    spectrum = Spectrum(
        eigenvalues=eigenvalues,
        eigenvectors=vectors,
        bc_tag=pair.bc_tag,
        mesh_size_h=pair.mesh.mesh_size_h,
        residuals=residuals,
        dof_map=pair.dof_map,
        mesh=pair.mesh,
        solver=method,
    )
    logger.debug(
        f"{pair.bc_tag.value} spectrum ({method}, n={n}): "
        + ", ".join(f"{v:.6g}" for v in eigenvalues[:5])
    )
    return spectrum


def m_orthonormality_defect(spectrum: Spectrum, pair: OperatorPair) -> float:
    vectors = spectrum.eigenvectors
    gram = vectors.T @ (pair.M @ vectors)
    return float(np.abs(gram - np.eye(spectrum.count)).max())


def solve_interval_ode(coeffs: CoefficientSet, a: float, b: float, bc: BoundaryCondition,
                       count: int, grid_n: Optional[int] = None,
                       estimate_error: bool = True) -> Spectrum:
    """
    Second-order finite-difference oracle for -(a u')' + V u = lambda rho u on [a, b]

    Cells carry the diffusion at their midpoints; the diagonal mass uses
    half weights at the end nodes, so Dirichlet and Neumann share one scheme.
    A rerun on the doubled grid supplies the self-reported error estimate.
    """
    grid_n = config.ode_grid_n if grid_n is None else grid_n
    if not a < b:
        raise EigenSolverError(f"interval endpoints must satisfy a < b, got a={a}, b={b}")
    if grid_n < 2:
        raise EigenSolverError(f"grid_n must be at least 2, got {grid_n}")

    eigenvalues, vectors, residuals = _ode_eigenpairs(coeffs, a, b, bc, count, grid_n)
    errors = None
    if estimate_error:
        doubled, _, _ = _ode_eigenpairs(coeffs, a, b, bc, count, 2 * grid_n)
        errors = 4.0 / 3.0 * np.abs(eigenvalues - doubled)

    dof_map = np.arange(grid_n + 1)
    if bc is BoundaryCondition.DIRICHLET:
        dof_map = dof_map[1:-1]
    return Spectrum(
        eigenvalues=eigenvalues,
        eigenvectors=vectors,
        bc_tag=bc,
        mesh_size_h=(b - a) / grid_n,
        residuals=residuals,
        dof_map=dof_map,
        solver="ode",
        error_estimates=errors,
    )


def _ode_eigenpairs(coeffs: CoefficientSet, a: float, b: float, bc: BoundaryCondition,
                    count: int, grid_n: int):
    h = (b - a) / grid_n
    x = np.linspace(a, b, grid_n + 1).reshape(-1, 1)
    midpoints = 0.5 * (x[1:] + x[:-1])
    conductance = coeffs.diffusion(midpoints)[:, 0, 0] / h
    weights = np.full(grid_n + 1, h)
    weights[[0, -1]] = 0.5 * h

    diagonal = np.zeros(grid_n + 1)
    diagonal[:-1] += conductance
    diagonal[1:] += conductance
    diagonal += weights * coeffs.potential(x)
    off_diagonal = -conductance
    mass = weights * coeffs.density(x)

    if bc is BoundaryCondition.DIRICHLET:
        diagonal, off_diagonal, mass = diagonal[1:-1], off_diagonal[1:-1], mass[1:-1]
    if count > diagonal.shape[0]:
        raise EigenSolverError(f"requested {count} eigenpairs of a {diagonal.shape[0]}-point grid")
    if (mass <= 0).any():
        raise MassMatrixError("density is not positive on the grid")

    scale = 1.0 / np.sqrt(mass)
    eigenvalues, y = scipy.linalg.eigh_tridiagonal(
        diagonal * scale**2, off_diagonal * scale[:-1] * scale[1:],
        select="i", select_range=(0, count - 1),
    )
    vectors = y * scale[:, None]
    pivots = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(count)]
    vectors = vectors * np.where(pivots < 0, -1.0, 1.0)

    stiffness = sparse.diags([off_diagonal, diagonal, off_diagonal], [-1, 0, 1])
    mass_action = mass[:, None] * vectors
    residuals = np.linalg.norm(stiffness @ vectors - mass_action * eigenvalues, axis=0) / (
        np.linalg.norm(mass_action, axis=0) * np.maximum(1.0, np.abs(eigenvalues))
    )
    return eigenvalues, vectors, residuals


# ---------------------------------------------------------------------------
# Extrapolation
# ---------------------------------------------------------------------------

def extrapolate(values: Sequence[float]) -> ExtrapolatedValue:
    """Order-2 Richardson extrapolation of values at h, h/2, h/4"""
    if len(values) != 3:
        raise EigenSolverError(f"extrapolation needs exactly three nested values, got {len(values)}")
    coarse, middle, fine = (float(v) for v in values)
    first, second = coarse - middle, middle - fine
    scale = max(abs(fine), 1.0)

    if abs(first) <= 1e-14 * scale and abs(second) <= 1e-14 * scale:
        return ExtrapolatedValue(fine, 0.0, None, [coarse, middle, fine])

    if first * second <= 0 or abs(second) >= abs(first):
        logger.warning(
            f"⚠️  Non-monotone refinement triple {coarse:.10g}, {middle:.10g}, {fine:.10g}; "
            "returning finest value with a conservative error bar"
        )
        return ExtrapolatedValue(fine, max(abs(first), abs(second)), None, [coarse, middle, fine], flagged=True)

    order = math.log2(first / second)
    value = fine - second / 3.0
    mismatch = abs(second) * abs(1.0 / 3.0 - 1.0 / (2.0**order - 1.0))
    return ExtrapolatedValue(value, abs(second) / 3.0 + mismatch, order, [coarse, middle, fine])


def match_modes(coarse: Spectrum, fine: Spectrum, transfer: sparse.spmatrix,
                fine_mass: sparse.spmatrix) -> np.ndarray:
    """Fine-mesh index of each coarse mode, by maximal M-correlation of eigenvectors"""
    lifted = transfer @ coarse.nodal_vectors()
    lifted = lifted[fine.dof_map]
    correlation = np.abs(fine.eigenvectors.T @ (fine_mass @ lifted))
    rows, cols = linear_sum_assignment(-correlation)
    matches = np.empty(coarse.count, dtype=int)
    matches[cols] = rows
    return matches


def extrapolate_chain(spectra: Sequence[Spectrum], masses: Sequence[sparse.spmatrix],
                      count: Optional[int] = None) -> List[ExtrapolatedValue]:
    """
    Extrapolated eigenvalues from three nested spectra, ascending

    Modes are followed from the coarsest mesh through eigenvector matching,
    so index swaps between levels do not mix different modes.
    """
    if len(spectra) != 3:
        raise EigenSolverError(f"extrapolation needs three nested spectra, got {len(spectra)}")
    coarse, middle, fine = spectra
    first = match_modes(coarse, middle, prolongation(coarse.mesh, middle.mesh), masses[1])
    second = match_modes(middle, fine, prolongation(middle.mesh, fine.mesh), masses[2])

    results = []
    for index in range(coarse.count):
        j = first[index]
        k = second[j]
        results.append(extrapolate([coarse.eigenvalues[index], middle.eigenvalues[j], fine.eigenvalues[k]]))
    results.sort(key=lambda item: item.value)
    return results[:count] if count is not None else results
