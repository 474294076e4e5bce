"""
P1 finite element assembly of the weighted forms

Stiffness  K_ij = int A grad(phi_j) . grad(phi_i) + V phi_i phi_j
Mass       M_ij = int rho phi_i phi_j

Neumann pairs live on every mesh node; Dirichlet pairs are obtained by
eliminating boundary rows and columns.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse

from .config import config
from .errors import AssemblyError, FieldError
from .fields import CoefficientSet, ScalarField
from .geometry import Mesh

logger = logging.getLogger(__name__)


class BoundaryCondition(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


# Symmetric triangle rules in barycentric coordinates; weights sum to 1
_TRIANGLE_RULES = {
    1: ([(1 / 3, 1 / 3, 1 / 3)], [1.0]),
    2: ([(2 / 3, 1 / 6, 1 / 6), (1 / 6, 2 / 3, 1 / 6), (1 / 6, 1 / 6, 2 / 3)], [1 / 3] * 3),
    3: (
        [(1 / 3, 1 / 3, 1 / 3), (0.6, 0.2, 0.2), (0.2, 0.6, 0.2), (0.2, 0.2, 0.6)],
        [-27 / 48, 25 / 48, 25 / 48, 25 / 48],
    ),
}


def _orbit(a: float) -> list:
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


_TRIANGLE_RULES[4] = (
    _orbit(0.445948490915965) + _orbit(0.091576213509771),
    [0.223381589678011] * 3 + [0.109951743655322] * 3,
)
_TRIANGLE_RULES[5] = (
    [(1 / 3, 1 / 3, 1 / 3)] + _orbit(0.470142064105115) + _orbit(0.101286507323456),
    [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3,
)


def quadrature_rule(dimension: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Barycentric points (Q, d+1) and weights (Q,) exact to the given polynomial order"""
    if not 1 <= order <= 5:
        raise AssemblyError(f"quadrature order must be between 1 and 5, got {order}")
    if dimension == 1:
        nodes, weights = leggauss(math.ceil((order + 1) / 2))
        t = 0.5 * (nodes + 1.0)
        return np.column_stack([1.0 - t, t]), 0.5 * weights
    points, weights = _TRIANGLE_RULES[order]
    return np.asarray(points), np.asarray(weights)


def quadrature_points(mesh: Mesh, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points (T, Q, d) and weights (T, Q) including element measure"""
    bary, weights = quadrature_rule(mesh.dimension, order)
    corners = mesh.nodes[mesh.elements]
    points = np.einsum("qk,tkd->tqd", bary, corners)
    return points, mesh.element_measures[:, None] * weights[None, :]


def facet_quadrature(mesh: Mesh, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss points (F, Q, 2) and weights (F, Q) on the boundary facets of a 2D mesh"""
    if mesh.dimension != 2:
        raise AssemblyError("facet quadrature needs a 2D mesh")
    bary, weights = quadrature_rule(1, order)
    start = mesh.nodes[mesh.facet_nodes[:, 0]]
    end = mesh.nodes[mesh.facet_nodes[:, 1]]
    points = start[:, None, :] * bary[None, :, 0:1] + end[:, None, :] * bary[None, :, 1:2]
    lengths = np.linalg.norm(end - start, axis=1)
    return points, lengths[:, None] * weights[None, :]


def basis_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the barycentric basis functions, shape (T, d+1, d)"""
    corners = mesh.nodes[mesh.elements]
    if mesh.dimension == 1:
        length = corners[:, 1, 0] - corners[:, 0, 0]
        grads = np.stack([-1.0 / length, 1.0 / length], axis=1)
        return grads[:, :, None]
    jacobian = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]], axis=2)
    inverse = np.linalg.inv(jacobian)
    g1, g2 = inverse[:, 0, :], inverse[:, 1, :]
    return np.stack([-(g1 + g2), g1, g2], axis=1)


def integrate(mesh: Mesh, integrand: Union[ScalarField, Callable[[np.ndarray], np.ndarray]],
              order: Optional[int] = None) -> float:
    """Element quadrature of a field over the mesh"""
    order = config.quadrature_order if order is None else order
    points, weights = quadrature_points(mesh, order)
    flat = points.reshape(-1, mesh.dimension)
    evaluate = integrand.evaluate if isinstance(integrand, ScalarField) else integrand
    values = np.asarray(evaluate(flat)).reshape(weights.shape)
    return float(np.sum(values * weights))


@dataclass(frozen=True, eq=False)
class OperatorPair:
    """Sparse stiffness and mass matrices with their provenance"""
    K: sparse.csr_matrix = field(repr=False)
    M: sparse.csr_matrix = field(repr=False)
    dof_map: np.ndarray = field(repr=False)
    bc_tag: BoundaryCondition
    mesh: Mesh = field(repr=False)
    coeffs: CoefficientSet = field(repr=False)
    quadrature_order: int

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]

    @property
    def provenance(self) -> dict:
        return {
            "coeff_id": self.coeffs.coeff_id,
            "mesh_id": self.mesh.mesh_id,
            "quadrature_order": self.quadrature_order,
            "bc": self.bc_tag.value,
            "n_dofs": self.n_dofs,
        }

    def extend(self, vectors: np.ndarray) -> np.ndarray:
        """Zero-extend dof vectors (n_dofs,) or (n_dofs, m) to all mesh nodes"""
        vectors = np.asarray(vectors)
        full = np.zeros((self.mesh.n_nodes,) + vectors.shape[1:], dtype=vectors.dtype)
        full[self.dof_map] = vectors
        return full

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        return np.asarray(nodal)[self.dof_map]


@dataclass(frozen=True, eq=False)
class FEFunction:
    """Coefficient vector over a dof map; vector-valued when values is 2D"""
    values: np.ndarray
    mesh: Mesh = field(repr=False)
    dof_map: np.ndarray = field(repr=False)
    bc_tag: BoundaryCondition = BoundaryCondition.NEUMANN

    def __post_init__(self):
        if self.values.shape[0] != self.dof_map.shape[0]:
            raise AssemblyError(
                f"FE function has {self.values.shape[0]} coefficients for {self.dof_map.shape[0]} dofs"
            )

    def nodal(self) -> np.ndarray:
        full = np.zeros((self.mesh.n_nodes,) + self.values.shape[1:], dtype=self.values.dtype)
        full[self.dof_map] = self.values
        return full

    def on(self, pair: OperatorPair) -> np.ndarray:
        """Coefficients in the dof numbering of `pair`"""
        if self.mesh is not pair.mesh:
            raise AssemblyError("FE function and operator pair live on different meshes")
        if np.array_equal(self.dof_map, pair.dof_map):
            return self.values
        return pair.restrict(self.nodal())


def _element_coefficients(mesh: Mesh, coeffs: CoefficientSet, order: int):
    points, weights = quadrature_points(mesh, order)
    flat = points.reshape(-1, mesh.dimension)
    try:
        rho = coeffs.density(flat).reshape(weights.shape)
        potential = coeffs.potential(flat).reshape(weights.shape)
        diffusion = coeffs.diffusion(flat).reshape(weights.shape + (mesh.dimension, mesh.dimension))
    except FieldError as exc:
        raise AssemblyError(f"coefficient evaluation failed during assembly: {exc}") from exc
    if rho.min() <= 0:
        raise AssemblyError(f"density is not positive at a quadrature point (min {rho.min():.3e})")
    return rho, potential, diffusion, weights


def assemble(mesh: Mesh, coeffs: CoefficientSet, quadrature_order: Optional[int] = None) -> OperatorPair:
    """Neumann stiffness/mass pair by element quadrature and symmetric scatter"""
    order = config.quadrature_order if quadrature_order is None else quadrature_order
    bary, _ = quadrature_rule(mesh.dimension, order)
    rho, potential, diffusion, weights = _element_coefficients(mesh, coeffs, order)
    grads = basis_gradients(mesh)

    # A-weighted gradient products, averaged over quadrature points
    mean_diffusion = np.einsum("tq,tqab->tab", weights, diffusion)
    stiffness = np.einsum("tia,tab,tjb->tij", grads, mean_diffusion, grads)
    products = np.einsum("qi,qj->qij", bary, bary)
    stiffness = stiffness + np.einsum("tq,qij->tij", weights * potential, products)
    mass = np.einsum("tq,qij->tij", weights * rho, products)

    stiffness = 0.5 * (stiffness + np.transpose(stiffness, (0, 2, 1)))
    K = _scatter(mesh, stiffness)
    M = _scatter(mesh, mass)
    logger.debug(f"Assembled {mesh.n_nodes}x{mesh.n_nodes} pair on mesh {mesh.mesh_id} (order {order})")
    return OperatorPair(
        K=K,
        M=M,
        dof_map=np.arange(mesh.n_nodes),
        bc_tag=BoundaryCondition.NEUMANN,
        mesh=mesh,
        coeffs=coeffs,
        quadrature_order=order,
    )


def _scatter(mesh: Mesh, local: np.ndarray) -> sparse.csr_matrix:
    """COO scatter of element matrices; duplicates summed on conversion"""
    n_local = mesh.elements.shape[1]
    rows = np.repeat(mesh.elements, n_local, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_local)).ravel()
    matrix = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    matrix.sum_duplicates()
    return matrix.tocsr()


def restrict_dirichlet(pair: OperatorPair) -> OperatorPair:
    """Eliminate boundary rows and columns; idempotent on Dirichlet pairs"""
    if pair.bc_tag is BoundaryCondition.DIRICHLET:
        return pair
    interior = pair.mesh.interior_nodes
    if interior.size == 0:
        raise AssemblyError(f"mesh {pair.mesh.mesh_id} has no interior nodes")
    return OperatorPair(
        K=pair.K[interior][:, interior].tocsr(),
        M=pair.M[interior][:, interior].tocsr(),
        dof_map=interior,
        bc_tag=BoundaryCondition.DIRICHLET,
        mesh=pair.mesh,
        coeffs=pair.coeffs,
        quadrature_order=pair.quadrature_order,
    )


def operator_pairs(mesh: Mesh, coeffs: CoefficientSet,
                   quadrature_order: Optional[int] = None) -> Tuple[OperatorPair, OperatorPair]:
    """(Neumann, Dirichlet) pairs for one mesh"""
    neumann = assemble(mesh, coeffs, quadrature_order)
    return neumann, restrict_dirichlet(neumann)


def rayleigh_quotient(u: Union[FEFunction, np.ndarray], pair: OperatorPair) -> float:
    """(u* K u) / (u* M u); complex vectors allowed"""
    vector = u.on(pair) if isinstance(u, FEFunction) else np.asarray(u)
    if vector.shape[0] != pair.n_dofs:
        raise AssemblyError(f"vector of length {vector.shape[0]} does not match {pair.n_dofs} dofs")
    norm = float(np.real(np.vdot(vector, pair.M @ vector)))
    if norm <= 0.0:
        raise AssemblyError("Rayleigh quotient of a function with zero M-norm")
    return float(np.real(np.vdot(vector, pair.K @ vector))) / norm


def interpolate(mesh: Mesh, func: Union[ScalarField, Callable[[np.ndarray], np.ndarray]],
                bc_tag: BoundaryCondition = BoundaryCondition.NEUMANN) -> FEFunction:
    """Nodal interpolant; complex-valued callables are kept complex"""
    evaluate = func.evaluate if isinstance(func, ScalarField) else func
    values = np.asarray(evaluate(mesh.nodes))
    dof_map = mesh.interior_nodes if bc_tag is BoundaryCondition.DIRICHLET else np.arange(mesh.n_nodes)
    return FEFunction(values=values[dof_map], mesh=mesh, dof_map=dof_map, bc_tag=bc_tag)


def gradient_recovery(u: FEFunction) -> FEFunction:
    """Nodal gradients by measure-weighted averaging of adjacent element gradients"""
    mesh = u.mesh
    nodal = u.nodal()
    grads = basis_gradients(mesh)
    element_gradient = np.einsum("tk,tkd->td", nodal[mesh.elements], grads)

    measures = mesh.element_measures
    n_local = mesh.elements.shape[1]
    rows = mesh.elements.ravel()
    weight = sparse.coo_matrix(
        (np.repeat(measures, n_local), (rows, np.repeat(np.arange(mesh.n_elements), n_local))),
        shape=(mesh.n_nodes, mesh.n_elements),
    ).tocsr()
    total = np.asarray(weight.sum(axis=1)).ravel()
    recovered = (weight @ element_gradient) / total[:, None]
    return FEFunction(
        values=recovered,
        mesh=mesh,
        dof_map=np.arange(mesh.n_nodes),
        bc_tag=BoundaryCondition.NEUMANN,
    )


def dump_matrix(matrix: sparse.spmatrix, path: Union[str, Path, None] = None) -> str:
    """Sorted `row col value` triples"""
    coo = sparse.coo_matrix(matrix)
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{int(r)} {int(c)} {v!r}" for r, c, v in
             zip(coo.row[order], coo.col[order], coo.data[order].tolist())]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
