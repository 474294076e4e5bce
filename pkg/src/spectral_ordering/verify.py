"""
Verification of Neumann/Dirichlet eigenvalue orderings

Inequality reports over nested meshes, trial-subspace certificates built
from plane waves and eigenfunction derivatives, the boundary integration
by parts identity on convex domains, the disk comparison chain for
log-subharmonic densities and the 1D reversed-ordering comparison.
"""
import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy import sparse

from .conditions import (
    ConditionReport,
    check_axis_symmetry,
    check_constant_eigenpair,
    check_convexity_combination,
    check_directional_invariance,
    check_div_curl_conditions,
    check_harmonic_gradient,
    check_log_harmonic,
    check_log_subharmonic,
    sample_points,
)
from .config import DEFAULT_ROTATIONS, THEOREM_HYPOTHESES, config
from .eigen import (
    ExtrapolatedValue,
    Spectrum,
    cluster_eigenvalues,
    extrapolate,
    extrapolate_chain,
    solve_interval_ode,
    solve_lowest,
)
from .errors import CertificateError, EigenSolverError, HypothesisError, SpectralOrderingError
from .fem import (
    BoundaryCondition,
    OperatorPair,
    assemble,
    facet_quadrature,
    gradient_recovery,
    integrate,
    operator_pairs,
    quadrature_points,
    rayleigh_quotient,
)
from .fields import (
    CoefficientSet,
    HarmonicPhase,
    ScalarField,
    construct_harmonic_phase,
    linear_phase,
    saddle_phase,
)
from .geometry import Mesh, curvature_at, refinement_chain
from .special_functions import disk_dirichlet_eigenvalue, disk_second_neumann_eigenvalue

logger = logging.getLogger(__name__)

Solver = Callable[[OperatorPair, int], Spectrum]
Phase = Union[ScalarField, HarmonicPhase]
Eigenpairs = Sequence[Tuple[float, Sequence[float]]]

# Equality slack for the min-max consistency check of a certificate
CONSISTENCY_SLACK = 1e-9
# A recovered derivative trial below this fraction of the eigenfunction norm is rejected
DERIVATIVE_NORM_FLOOR = 1e-10
# Margin multiple of the self-reported error for the 1D comparison
POLYA_ERROR_FACTOR = 10.0


class Verdict(str, Enum):
    HOLDS = "holds"
    WITHIN_TOLERANCE = "holds-within-tolerance"
    VIOLATED = "violated"
    REVERSED = "reversed"
    UNSUPPORTED = "unsupported hypothesis"

    @property
    def confirmed(self) -> bool:
        return self in (Verdict.HOLDS, Verdict.WITHIN_TOLERANCE)


def decide_verdict(margin: float, combined_error: float) -> Verdict:
    if margin > combined_error:
        return Verdict.HOLDS
    if margin < -combined_error:
        return Verdict.VIOLATED
    return Verdict.WITHIN_TOLERANCE


@dataclass
class InequalityReport:
    """Outcome of testing mu_{k+r} <= lambda_k on nested meshes"""
    theorem_name: str
    k: int
    r: int
    lambda_k: ExtrapolatedValue
    mu_k_plus_r: ExtrapolatedValue
    margin: float
    combined_error: float
    verdict: Verdict
    numeric_verdict: Verdict
    hypotheses: List[ConditionReport] = field(default_factory=list)
    refinement_history: List[dict] = field(default_factory=list)
    discrete_trivial_holds: bool = True
    flagged: bool = False
    chain: List[dict] = field(default_factory=list)
    # 1-based indices numerically indistinguishable from lambda_k and mu_{k+r}
    lambda_cluster: List[int] = field(default_factory=list)
    mu_cluster: List[int] = field(default_factory=list)
    cluster_spread: float = 0.0

    @property
    def hypotheses_passed(self) -> bool:
        return all(report.passed for report in self.hypotheses)

    def to_dict(self) -> dict:
        return {
            "theorem_name": self.theorem_name,
            "k": self.k,
            "r": self.r,
            "lambda_k": self.lambda_k.to_dict(),
            "mu_k_plus_r": self.mu_k_plus_r.to_dict(),
            "margin": self.margin,
            "combined_error": self.combined_error,
            "verdict": self.verdict.value,
            "numeric_verdict": self.numeric_verdict.value,
            "hypotheses": [report.to_dict() for report in self.hypotheses],
            "refinement_history": self.refinement_history,
            "discrete_trivial_holds": self.discrete_trivial_holds,
            "flagged": self.flagged,
            "chain": self.chain,
            "lambda_cluster": self.lambda_cluster,
            "mu_cluster": self.mu_cluster,
            "cluster_spread": self.cluster_spread,
        }


@dataclass
class TrialVector:
    """Nodal trial function over every mesh node, tagged with its construction"""
    values: np.ndarray = field(repr=False)
    label: str
    construction: dict
    boundary_trace_norm: float

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "construction": self.construction,
            "boundary_trace_norm": self.boundary_trace_norm,
        }


@dataclass
class Certificate:
    """Projected pencil on span(U + W) and the eigenvalue bound it proves"""
    lambda_target: float
    k: int
    requested_r: int
    r: int
    trial_labels: List[str]
    trial_constructions: List[dict]
    dropped_trials: List[str]
    q_max: float
    projected_eigenvalues: List[float]
    min_gram_eigenvalue: float
    independent: bool
    passed: bool
    mesh_id: str
    mesh_size_h: float
    # added to the bound when the finest level is judged against the refinement limit
    allowance: float = 0.0

    @property
    def dimension(self) -> int:
        return self.k + self.r

    def to_dict(self) -> dict:
        return {
            "lambda_target": self.lambda_target,
            "k": self.k,
            "requested_r": self.requested_r,
            "r": self.r,
            "dimension": self.dimension,
            "trial_labels": self.trial_labels,
            "trial_constructions": self.trial_constructions,
            "dropped_trials": self.dropped_trials,
            "q_max": self.q_max,
            "projected_eigenvalues": self.projected_eigenvalues,
            "min_gram_eigenvalue": self.min_gram_eigenvalue,
            "independent": self.independent,
            "passed": self.passed,
            "mesh_id": self.mesh_id,
            "mesh_size_h": self.mesh_size_h,
            "allowance": self.allowance,
        }


@dataclass
class CertificationReport:
    """
    Certificates at the extrapolated and at the discrete lambda_k

    Plane-wave runs on three or more levels also carry one discrete
    certificate per level, the extrapolated q_max and the fitted C of
    q_max <= lambda_k (1 + C h^2) on the finest mesh.
    """
    theorem_name: str
    k: int
    trial_kind: str
    lambda_k: ExtrapolatedValue
    lambda_k_discrete: float
    certificates: List[Certificate]
    neumann_eigenvalues: List[float]
    consistent: bool
    hypotheses: List[ConditionReport] = field(default_factory=list)
    level_q_max: List[float] = field(default_factory=list)
    level_excess: List[float] = field(default_factory=list)
    q_max_limit: Optional[ExtrapolatedValue] = None
    c_fit: Optional[float] = None
    limit_verdict: Optional[Verdict] = None

    @property
    def passed(self) -> bool:
        return self.certificates[-1].passed and self.consistent

    def to_dict(self) -> dict:
        return {
            "theorem_name": self.theorem_name,
            "k": self.k,
            "trial_kind": self.trial_kind,
            "lambda_k": self.lambda_k.to_dict(),
            "lambda_k_discrete": self.lambda_k_discrete,
            "certificates": [c.to_dict() for c in self.certificates],
            "neumann_eigenvalues": self.neumann_eigenvalues,
            "consistent": self.consistent,
            "passed": self.passed,
            "hypotheses": [report.to_dict() for report in self.hypotheses],
            "level_q_max": self.level_q_max,
            "level_excess": self.level_excess,
            "q_max_limit": self.q_max_limit.to_dict() if self.q_max_limit is not None else None,
            "c_fit": self.c_fit,
            "limit_verdict": self.limit_verdict.value if self.limit_verdict is not None else None,
        }


@dataclass
class RotationFamily:
    """One certificate per rotated phase plus the independence of the whole family"""
    certificates: List[Certificate]
    rotations: List[float]
    family_min_gram_eigenvalue: float
    family_independent: bool

    def to_dict(self) -> dict:
        return {
            "rotations": self.rotations,
            "certificates": [c.to_dict() for c in self.certificates],
            "family_min_gram_eigenvalue": self.family_min_gram_eigenvalue,
            "family_independent": self.family_independent,
        }


@dataclass
class QuotientFit:
    """Plane-wave Rayleigh quotients against mu (1 + C h^2)"""
    mu_target: float
    mesh_sizes: List[float]
    quotients: List[float]
    c_fit: float
    c_bound: float

    def to_dict(self) -> dict:
        return {
            "mu_target": self.mu_target,
            "mesh_sizes": self.mesh_sizes,
            "quotients": self.quotients,
            "c_fit": self.c_fit,
            "c_bound": self.c_bound,
        }


@dataclass
class IBPReport:
    """Both sides of int |grad(b.F)|^2 = int div F (b^T DF b) - 1/2 int_boundary |F|^2 (b^T B b)"""
    lhs: float
    interior_term: float
    boundary_term: float
    rhs: float
    residual: float
    mesh_size_h: float
    n_elements: int
    boundary_kind: str
    direction: List[float]

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "interior_term": self.interior_term,
            "boundary_term": self.boundary_term,
            "rhs": self.rhs,
            "residual": self.residual,
            "mesh_size_h": self.mesh_size_h,
            "n_elements": self.n_elements,
            "boundary_kind": self.boundary_kind,
            "direction": self.direction,
        }


@dataclass
class IBPConvergence:
    reports: List[IBPReport]
    observed_orders: List[Optional[float]]

    @property
    def min_observed_order(self) -> Optional[float]:
        orders = [order for order in self.observed_orders if order is not None]
        return min(orders) if orders else None

    def to_dict(self) -> dict:
        return {
            "reports": [report.to_dict() for report in self.reports],
            "observed_orders": self.observed_orders,
            "min_observed_order": self.min_observed_order,
        }


# ---------------------------------------------------------------------------
# Hypotheses
# ---------------------------------------------------------------------------

@dataclass
class HypothesisContext:
    """Extra data some checkers need beyond the coefficients"""
    invariant_basis: Optional[List[List[float]]] = None
    directions: Optional[List[List[float]]] = None
    phase: Optional[ScalarField] = None
    xi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    basepoint: Optional[Sequence[float]] = None
    sample_count: Optional[int] = None


def _failed_report(name: str, message: str, sample_count: int) -> ConditionReport:
    logger.warning(f"❌ {name}: {message}")
    return ConditionReport(
        condition_name=name,
        passed=False,
        max_residual=math.inf,
        sample_count=sample_count,
        tolerance=0.0,
        witness=[],
        details={"error": message},
    )


def run_hypotheses(theorem_name: str, mesh: Mesh, coeffs: CoefficientSet, lambda1: float,
                   k: int = 1, r: int = 1,
                   context: Optional[HypothesisContext] = None) -> List[ConditionReport]:
    """Run every checker attached to a theorem; failures are reported, not raised"""
    if theorem_name not in THEOREM_HYPOTHESES:
        raise HypothesisError(f"unknown theorem '{theorem_name}'; known: {sorted(THEOREM_HYPOTHESES)}")
    context = context or HypothesisContext()
    points = sample_points(mesh, context.sample_count)

    reports = []
    for name in THEOREM_HYPOTHESES[theorem_name]:
        # symmetry buys the extra index only once r reaches the dimension
        if name == "axis_symmetry" and r < mesh.dimension:
            continue
        try:
            reports.append(_run_checker(name, theorem_name, mesh, coeffs, lambda1, k, r, context, points))
        except SpectralOrderingError as exc:
            reports.append(_failed_report(name, str(exc), points.shape[0]))
    return reports


def _run_checker(name: str, theorem_name: str, mesh: Mesh, coeffs: CoefficientSet, lambda1: float,
                 k: int, r: int, context: HypothesisContext, points: np.ndarray) -> ConditionReport:
    rho, V, A = coeffs.rho, coeffs.V, coeffs.A

    if name == "convexity_combination":
        directions = context.directions if theorem_name == "directional_convexity" else None
        if theorem_name == "directional_convexity" and not directions:
            raise HypothesisError("directional convexity needs a list of directions")
        report = check_convexity_combination(rho, V, lambda1, points, directions=directions)
        if k != 1:
            report.passed = False
            report.details["index_note"] = f"convexity orders eigenvalues against lambda_1 only, got k={k}"
        return report
    if name == "axis_symmetry":
        return check_axis_symmetry(mesh, rho, V, points)
    if name == "directional_invariance":
        if not context.invariant_basis:
            raise HypothesisError("directional invariance needs an invariant basis")
        report = check_directional_invariance(rho, V, context.invariant_basis, points)
        if report.details["invariant_dimension"] < r:
            report.passed = False
            report.details["index_note"] = f"r={r} exceeds the invariant dimension"
        return report
    if name == "log_harmonic":
        return check_log_harmonic(rho, points)
    if name == "harmonic_gradient":
        phase = context.phase
        if phase is None:
            basepoint = context.basepoint if context.basepoint is not None else mesh.nodes[0]
            phase = construct_harmonic_phase(rho, basepoint, mesh).field
        return check_harmonic_gradient(phase, rho, points)
    if name == "constant_eigenpair":
        if A is None:
            raise HypothesisError("constant eigenpair check needs a diffusion matrix A")
        report, _ = check_constant_eigenpair(A, points)
        return report
    if name == "div_curl":
        if A is None or context.xi is None:
            raise HypothesisError("div-curl check needs a diffusion matrix A and a unit field xi")
        return check_div_curl_conditions(A, context.xi, mesh)
    if name == "log_subharmonic":
        return check_log_subharmonic(rho, points)
    raise HypothesisError(f"no checker named '{name}'")


# ---------------------------------------------------------------------------
# Nested spectra
# ---------------------------------------------------------------------------

def solve_nested(meshes: Sequence[Mesh], coeffs: CoefficientSet, counts: Dict[BoundaryCondition, int],
                 quadrature_order: Optional[int] = None, solver: Optional[Solver] = None,
                 executor: Optional[Executor] = None) -> Dict[BoundaryCondition, Tuple[List[Spectrum], List[OperatorPair]]]:
    """Spectra and operator pairs per level; solves run on the executor when given"""
    solver = solver or solve_lowest
    pairs: Dict[BoundaryCondition, List[OperatorPair]] = {bc: [] for bc in counts}
    for mesh in meshes:
        neumann, dirichlet = operator_pairs(mesh, coeffs, quadrature_order)
        for bc, pair in ((BoundaryCondition.NEUMANN, neumann), (BoundaryCondition.DIRICHLET, dirichlet)):
            if bc in pairs:
                pairs[bc].append(pair)

    jobs = [(bc, pair, min(counts[bc], pair.n_dofs)) for bc in counts for pair in pairs[bc]]
    if executor is None:
        results = [solver(pair, count) for _, pair, count in jobs]
    else:
        futures = [executor.submit(solver, pair, count) for _, pair, count in jobs]
        results = [future.result() for future in futures]

    spectra: Dict[BoundaryCondition, List[Spectrum]] = {bc: [] for bc in counts}
    for (bc, _, _), spectrum in zip(jobs, results):
        spectra[bc].append(spectrum)
    return {bc: (spectra[bc], pairs[bc]) for bc in counts}


def extrapolated_eigenvalues(spectra: Sequence[Spectrum], pairs: Sequence[OperatorPair]) -> List[ExtrapolatedValue]:
    """Extrapolate over the last three levels; shorter chains return flagged finest values"""
    if len(spectra) >= 3:
        return extrapolate_chain(spectra[-3:], [pair.M for pair in pairs[-3:]])

    finest = spectra[-1].eigenvalues
    if len(spectra) == 1:
        errors = np.zeros_like(finest)
        raw = [[float(v)] for v in finest]
    else:
        previous = spectra[-2].eigenvalues
        n = min(len(previous), len(finest))
        errors = np.full_like(finest, math.inf)
        errors[:n] = np.abs(previous[:n] - finest[:n])
        raw = [[float(previous[i]), float(finest[i])] if i < n else [float(finest[i])]
               for i in range(len(finest))]
    logger.warning(f"⚠️  Only {len(spectra)} refinement level(s); extrapolation skipped")
    return [ExtrapolatedValue(float(v), float(e), None, r, flagged=True)
            for v, e, r in zip(finest, errors, raw)]


def extrapolated_clusters(values: Sequence[ExtrapolatedValue], rtol: Optional[float] = None) -> np.ndarray:
    """
    Cluster ids of ascending extrapolated eigenvalues

    Neighbours share a cluster when they agree to the relative cluster
    tolerance or when their error bars overlap, so a double eigenvalue
    split by the mesh stays one cluster.
    """
    ids = cluster_eigenvalues([v.value for v in values], rtol)
    merged = np.zeros(len(values), dtype=int)
    for i in range(1, len(values)):
        gap = values[i].value - values[i - 1].value
        same = ids[i] == ids[i - 1] or gap <= values[i].error_estimate + values[i - 1].error_estimate
        merged[i] = merged[i - 1] if same else merged[i - 1] + 1
    return merged


def _cluster_around(values: Sequence[ExtrapolatedValue], index: int) -> Tuple[List[int], float]:
    """1-based members of the cluster holding `index` and the spread of their values"""
    ids = extrapolated_clusters(values)
    members = np.flatnonzero(ids == ids[index])
    spread = float(values[members[-1]].value - values[members[0]].value)
    return [int(i) + 1 for i in members], spread


def _discrete_trivial(dirichlet: Spectrum, neumann: Spectrum, tolerance: float = 1e-10) -> bool:
    n = min(dirichlet.count, neumann.count)
    lam, mu = dirichlet.eigenvalues[:n], neumann.eigenvalues[:n]
    return bool(np.all(mu <= lam + tolerance * np.maximum(1.0, np.abs(lam))))


def _meshes(mesh: Mesh, levels: int, meshes: Optional[Sequence[Mesh]]) -> List[Mesh]:
    if meshes is not None:
        return list(meshes)
    if levels < 1:
        raise SpectralOrderingError(f"refinement levels must be positive, got {levels}")
    return refinement_chain(mesh, levels)


# ---------------------------------------------------------------------------
# Inequalities
# ---------------------------------------------------------------------------

def verify_inequality(mesh: Mesh, coeffs: CoefficientSet, k: int, r: int,
                      theorem_name: str = "trivial", levels: int = 3,
                      context: Optional[HypothesisContext] = None,
                      quadrature_order: Optional[int] = None,
                      solver: Optional[Solver] = None,
                      executor: Optional[Executor] = None,
                      meshes: Optional[Sequence[Mesh]] = None) -> InequalityReport:
    """
    Test mu_{k+r} <= lambda_k with extrapolated error bars

    Both spectra are solved on the refinement chain of `mesh` (or on the
    given `meshes`), followed mode by mode across levels and extrapolated.
    The verdict compares the margin against the summed error estimates,
    widened by the spread of the clusters holding lambda_k and mu_{k+r};
    failed hypotheses downgrade it to "unsupported hypothesis".
    """
    if k < 1 or r < 0:
        raise SpectralOrderingError(f"indices must satisfy k >= 1 and r >= 0, got k={k}, r={r}")
    chain = _meshes(mesh, levels, meshes)
    logger.info(f"📐 Verifying mu_{k + r} <= lambda_{k} ({theorem_name}) on {len(chain)} level(s)")

    solved = solve_nested(
        chain, coeffs,
        {BoundaryCondition.DIRICHLET: k + 2, BoundaryCondition.NEUMANN: k + r + 2},
        quadrature_order, solver, executor,
    )
    d_spectra, d_pairs = solved[BoundaryCondition.DIRICHLET]
    n_spectra, n_pairs = solved[BoundaryCondition.NEUMANN]
    lambdas = extrapolated_eigenvalues(d_spectra, d_pairs)
    mus = extrapolated_eigenvalues(n_spectra, n_pairs)
    if k > len(lambdas) or k + r > len(mus):
        raise EigenSolverError(f"coarsest mesh carries too few eigenpairs for k={k}, r={r}")

    lam, mu = lambdas[k - 1], mus[k + r - 1]
    lambda_cluster, lambda_spread = _cluster_around(lambdas, k - 1)
    mu_cluster, mu_spread = _cluster_around(mus, k + r - 1)
    spread = lambda_spread + mu_spread
    margin = lam.value - mu.value
    combined = lam.error_estimate + mu.error_estimate + spread + config.verdict_slack
    numeric = decide_verdict(margin, combined)

    history = [
        {
            "level": level,
            "mesh_size_h": d.mesh_size_h,
            "n_nodes": m.n_nodes,
            "lambda_k": float(d.eigenvalues[k - 1]),
            "mu_k_plus_r": float(n.eigenvalues[k + r - 1]) if n.count >= k + r else None,
            "trivial_inequality_holds": _discrete_trivial(d, n),
        }
        for level, (m, d, n) in enumerate(zip(chain, d_spectra, n_spectra))
    ]
    trivial = all(entry["trivial_inequality_holds"] for entry in history)
    if not trivial:
        logger.error("❌ Discrete inequality mu_j <= lambda_j failed on some level")

    hypotheses = run_hypotheses(theorem_name, chain[0], coeffs, lambdas[0].value, k, r, context)
    verdict = numeric if all(report.passed for report in hypotheses) else Verdict.UNSUPPORTED

    report = InequalityReport(
        theorem_name=theorem_name,
        k=k,
        r=r,
        lambda_k=lam,
        mu_k_plus_r=mu,
        margin=margin,
        combined_error=combined,
        verdict=verdict,
        numeric_verdict=numeric,
        hypotheses=hypotheses,
        refinement_history=history,
        discrete_trivial_holds=trivial,
        flagged=len(chain) < 3 or lam.flagged or mu.flagged,
        lambda_cluster=lambda_cluster,
        mu_cluster=mu_cluster,
        cluster_spread=spread,
    )
    logger.info(
        f"{'✅' if verdict.confirmed else '❌'} mu_{k + r} = {mu.value:.10g}, lambda_{k} = {lam.value:.10g}, "
        f"margin {margin:.3e} +/- {combined:.1e}: {verdict.value}"
    )
    return report


def _chain_link(left_name: str, left: float, left_error: float,
                right_name: str, right: float, right_error: float) -> dict:
    margin = right - left
    combined = left_error + right_error + config.verdict_slack
    return {
        "inequality": f"{left_name} <= {right_name}",
        "left": left,
        "right": right,
        "margin": margin,
        "combined_error": combined,
        "verdict": decide_verdict(margin, combined).value,
    }


def nehari_bandle_check(mesh: Mesh, rho: ScalarField, levels: int = 3,
                        quadrature_order: Optional[int] = None,
                        solver: Optional[Solver] = None,
                        executor: Optional[Executor] = None,
                        meshes: Optional[Sequence[Mesh]] = None) -> InequalityReport:
    """
    Compare against the disk of area int rho for a log-subharmonic density:
    mu_2 <= mu_2(disk) < lambda_1(disk) <= lambda_1
    """
    if mesh.dimension != 2:
        raise HypothesisError("the disk comparison needs a 2D domain")
    if mesh.euler_characteristic != 1:
        raise HypothesisError(f"domain is not simply connected (Euler characteristic {mesh.euler_characteristic})")
    subharmonic = check_log_subharmonic(rho, sample_points(mesh))
    if not subharmonic.passed:
        raise HypothesisError(f"density {rho.name} is not log-subharmonic "
                              f"(residual {subharmonic.max_residual:.3e})")

    coeffs = CoefficientSet(rho=rho)
    chain = _meshes(mesh, levels, meshes)
    solved = solve_nested(
        chain, coeffs, {BoundaryCondition.DIRICHLET: 3, BoundaryCondition.NEUMANN: 4},
        quadrature_order, solver, executor,
    )
    lambdas = extrapolated_eigenvalues(*solved[BoundaryCondition.DIRICHLET])
    mus = extrapolated_eigenvalues(*solved[BoundaryCondition.NEUMANN])
    lam1, mu2 = lambdas[0], mus[1]

    total = integrate(chain[-1], rho, order=4)
    radius = math.sqrt(total / math.pi)
    disk_mu2 = disk_second_neumann_eigenvalue(radius)
    disk_lambda1 = disk_dirichlet_eigenvalue(radius)
    logger.info(f"⭕ Disk of area {total:.8g}: R = {radius:.8g}, mu_2 = {disk_mu2:.8g}, lambda_1 = {disk_lambda1:.8g}")

    links = [
        _chain_link("mu_2", mu2.value, mu2.error_estimate, "mu_2(disk)", disk_mu2, 0.0),
        _chain_link("mu_2(disk)", disk_mu2, 0.0, "lambda_1(disk)", disk_lambda1, 0.0),
        _chain_link("lambda_1(disk)", disk_lambda1, 0.0, "lambda_1", lam1.value, lam1.error_estimate),
    ]
    verdicts = [Verdict(link["verdict"]) for link in links]
    if Verdict.VIOLATED in verdicts:
        verdict = Verdict.VIOLATED
    elif Verdict.WITHIN_TOLERANCE in verdicts:
        verdict = Verdict.WITHIN_TOLERANCE
    else:
        verdict = Verdict.HOLDS

    d_spectra, _ = solved[BoundaryCondition.DIRICHLET]
    n_spectra, _ = solved[BoundaryCondition.NEUMANN]
    history = [
        {
            "level": level,
            "mesh_size_h": d.mesh_size_h,
            "lambda_1": float(d.eigenvalues[0]),
            "mu_2": float(n.eigenvalues[1]),
            "trivial_inequality_holds": _discrete_trivial(d, n),
        }
        for level, (d, n) in enumerate(zip(d_spectra, n_spectra))
    ]
    margin = lam1.value - mu2.value
    return InequalityReport(
        theorem_name="nehari_bandle",
        k=1,
        r=1,
        lambda_k=lam1,
        mu_k_plus_r=mu2,
        margin=margin,
        combined_error=lam1.error_estimate + mu2.error_estimate + config.verdict_slack,
        verdict=verdict,
        numeric_verdict=verdict,
        hypotheses=[subharmonic],
        refinement_history=history,
        discrete_trivial_holds=all(entry["trivial_inequality_holds"] for entry in history),
        flagged=len(chain) < 3 or lam1.flagged or mu2.flagged,
        chain=links,
    )


def polya_comparison_1d(coeffs: CoefficientSet, a: float = 0.0, b: float = 1.0,
                        grid_n: Optional[int] = None) -> InequalityReport:
    """mu_2 against lambda_1 on an interval; 'reversed' when mu_2 clearly exceeds lambda_1"""
    dirichlet = solve_interval_ode(coeffs, a, b, BoundaryCondition.DIRICHLET, 1, grid_n)
    neumann = solve_interval_ode(coeffs, a, b, BoundaryCondition.NEUMANN, 2, grid_n)
    lam = ExtrapolatedValue(float(dirichlet.eigenvalues[0]), float(dirichlet.error_estimates[0]),
                            None, [float(dirichlet.eigenvalues[0])])
    mu = ExtrapolatedValue(float(neumann.eigenvalues[1]), float(neumann.error_estimates[1]),
                           None, [float(neumann.eigenvalues[1])])

    margin = lam.value - mu.value
    combined = lam.error_estimate + mu.error_estimate
    threshold = POLYA_ERROR_FACTOR * combined + config.verdict_slack
    if margin > threshold:
        verdict = Verdict.HOLDS
    elif margin < -threshold:
        verdict = Verdict.REVERSED
    else:
        verdict = Verdict.WITHIN_TOLERANCE
    logger.info(f"🎻 1D comparison: lambda_1 = {lam.value:.10g}, mu_2 = {mu.value:.10g}: {verdict.value}")

    return InequalityReport(
        theorem_name="polya_1d",
        k=1,
        r=1,
        lambda_k=lam,
        mu_k_plus_r=mu,
        margin=margin,
        combined_error=threshold,
        verdict=verdict,
        numeric_verdict=verdict,
        refinement_history=[{
            "grid_n": dirichlet.dof_map.shape[0] + 1,
            "lambda_1": lam.value,
            "mu_2": mu.value,
            "self_reported_errors": [lam.error_estimate, mu.error_estimate],
        }],
        discrete_trivial_holds=_discrete_trivial(dirichlet, neumann),
    )


# ---------------------------------------------------------------------------
# Trial functions
# ---------------------------------------------------------------------------

def _boundary_trace_norm(mesh: Mesh, values: np.ndarray) -> float:
    if mesh.dimension == 1:
        return float(np.sqrt(np.sum(np.abs(values[mesh.boundary_nodes]) ** 2)))
    facets = mesh.facet_nodes
    lengths = np.linalg.norm(mesh.nodes[facets[:, 1]] - mesh.nodes[facets[:, 0]], axis=1)
    squared = 0.5 * (np.abs(values[facets[:, 0]]) ** 2 + np.abs(values[facets[:, 1]]) ** 2)
    return float(np.sqrt(lengths @ squared))


def _rotate(vector: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([c * vector[0] - s * vector[1], s * vector[0] + c * vector[1]])


def phase_family(phase: Phase, rotations: Sequence[float]) -> List[Tuple[float, ScalarField]]:
    """Rotated copies of a phase that keep |grad h|^2 fixed"""
    if isinstance(phase, HarmonicPhase):
        return [(float(theta), phase.rotated(theta)) for theta in rotations]
    if phase.name == "saddle_phase":
        base = float(phase.params.get("rotation", 0.0))
        return [(float(theta), saddle_phase(base + theta)) for theta in rotations]
    if phase.name == "linear_phase" and len(phase.params["direction"]) == 2:
        direction = np.asarray(phase.params["direction"], dtype=float)
        return [(float(theta), linear_phase(_rotate(direction, theta))) for theta in rotations]
    if any(theta != 0.0 for theta in rotations):
        logger.warning(f"⚠️  Phase {phase.name} has no rotation family; using it unrotated")
    return [(0.0, phase)]


def eigenpair_phases(eigenpairs: Eigenpairs, rotations: Sequence[float]) -> List[Tuple[float, ScalarField]]:
    """h = lambda_A^(-1/2) xi . x, rotated between two constant eigenpairs when both exist"""
    if not eigenpairs:
        raise HypothesisError("diffusion matrix has no constant eigenpair")
    scaled = [np.asarray(xi, dtype=float) / math.sqrt(lam) for lam, xi in eigenpairs]
    if len(scaled) == 1:
        return [(0.0, linear_phase(scaled[0]))]
    first, second = scaled[0], scaled[1]
    return [(float(theta), linear_phase(math.cos(theta) * first + math.sin(theta) * second))
            for theta in rotations]


def _phase_mismatch(h: ScalarField, coeffs: CoefficientSet, points: np.ndarray) -> float:
    """max |A grad h . grad h - rho| relative to max(1, rho)"""
    grad = h.grad(points)
    flux = np.einsum("nij,nj->ni", coeffs.diffusion(points), grad)
    density = coeffs.density(points)
    return float((np.abs(np.einsum("ni,ni->n", flux, grad) - density) / np.maximum(1.0, density)).max())


def build_plane_wave_trials(mesh: Mesh, coeffs: CoefficientSet, mu_target: float,
                            phase: Optional[Phase] = None,
                            eigenpairs: Optional[Eigenpairs] = None,
                            rotations: Sequence[float] = DEFAULT_ROTATIONS,
                            points: Optional[np.ndarray] = None) -> List[TrialVector]:
    """
    Nodal interpolants of w = exp(i sqrt(mu) h), one per rotated phase

    Membrane problems take a phase with |grad h|^2 = rho and Delta h = 0;
    divergence-form problems take the constant eigenpairs of A, giving
    h = lambda_A^(-1/2) xi . x. Trials stay complex.
    """
    if mu_target <= 0:
        raise CertificateError(f"plane-wave trials need a positive target, got {mu_target}")
    if (phase is None) == (eigenpairs is None):
        raise CertificateError("give exactly one of a phase or constant eigenpairs")
    membrane = eigenpairs is None and coeffs.A is None
    family = phase_family(phase, rotations) if phase is not None else eigenpair_phases(eigenpairs, rotations)
    points = sample_points(mesh) if points is None else points
    wavenumber = math.sqrt(mu_target)

    trials = []
    for theta, h in family:
        if membrane:
            report = check_harmonic_gradient(h, coeffs.rho, points)
            residual, passed = report.max_residual, report.passed
        else:
            residual = _phase_mismatch(h, coeffs, points)
            passed = residual <= config.fd_tolerance
        if not passed:
            raise HypothesisError(f"phase {h.name} at rotation {theta:.4f} fails |grad h|^2 = rho "
                                  f"(residual {residual:.3e})")

        values = np.exp(1j * wavenumber * h.evaluate(mesh.nodes))
        trace = _boundary_trace_norm(mesh, values)
        if trace <= config.trace_threshold:
            raise CertificateError(f"plane-wave trial at rotation {theta:.4f} has a vanishing boundary trace")
        trials.append(TrialVector(
            values=values,
            label=f"plane_wave[{h.name}, theta={theta:.4f}]",
            construction={"kind": "plane_wave", "phase": h.name, "rotation": theta,
                          "mu": mu_target, "phase_residual": residual},
            boundary_trace_norm=trace,
        ))
    logger.debug(f"Built {len(trials)} plane-wave trial(s) at mu = {mu_target:.8g}")
    return trials


def _lumped_weights(mesh: Mesh) -> np.ndarray:
    n_local = mesh.elements.shape[1]
    weights = np.zeros(mesh.n_nodes)
    np.add.at(weights, mesh.elements.ravel(), np.repeat(mesh.element_measures / n_local, n_local))
    return weights


def build_derivative_trials(spectrum: Spectrum, index: int, directions: Sequence[Sequence[float]],
                            mass: Optional[sparse.spmatrix] = None) -> List[TrialVector]:
    """b . grad(phi) for each direction b, from recovered nodal gradients of an eigenfunction"""
    if not directions:
        raise CertificateError("derivative trials need at least one direction")
    phi = spectrum.eigenfunction(index)
    mesh = phi.mesh
    recovered = gradient_recovery(phi).values
    nodal = phi.nodal()

    if mass is None:
        weights = _lumped_weights(mesh)

        def norm(v):
            return float(np.sqrt(weights @ np.abs(v) ** 2))
    else:
        def norm(v):
            return float(np.sqrt(np.real(np.vdot(v, mass @ v))))

    reference = norm(nodal)
    trials = []
    for b in directions:
        b = np.asarray(b, dtype=float)
        if b.shape != (mesh.dimension,) or not np.any(b):
            raise CertificateError(f"direction {b.tolist()} is zero or has the wrong dimension")
        values = recovered @ b
        if norm(values) < DERIVATIVE_NORM_FLOOR * reference:
            raise CertificateError(f"derivative of eigenfunction {index} along {b.tolist()} vanishes")
        trials.append(TrialVector(
            values=values,
            label=f"derivative[phi_{index + 1}, b={b.tolist()}]",
            construction={"kind": "derivative", "eigenfunction": index, "direction": b.tolist()},
            boundary_trace_norm=_boundary_trace_norm(mesh, values),
        ))
    return trials


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

def _normalized_basis(pair: OperatorPair, columns: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.real(np.einsum("ij,ij->j", columns.conj(), pair.M @ columns)))
    if (norms <= 0).any():
        raise CertificateError("trial space contains a vector of zero M-norm")
    return columns / norms


def _hermitian(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def assemble_certificate(pair: OperatorPair, dirichlet: Spectrum, k: int,
                         trials: Sequence[TrialVector], lambda_target: float,
                         rtol: Optional[float] = None,
                         gram_threshold: Optional[float] = None,
                         allowance: float = 0.0) -> Certificate:
    """
    Largest Rayleigh quotient over span(U + W) on the Neumann pencil

    U holds the first k Dirichlet eigenvectors, zero-extended; W holds the
    trials. Trials are dropped one at a time, along the weakest Gram
    direction, until the normalized Gram matrix has its smallest
    eigenvalue above the threshold. The certificate passes when q_max
    stays below lambda_target (1 + rtol) plus the slack and `allowance`.
    """
    if allowance < 0:
        raise CertificateError(f"allowance must be non-negative, got {allowance}")
    rtol = config.certificate_rtol if rtol is None else rtol
    gram_threshold = config.gram_threshold if gram_threshold is None else gram_threshold
    if pair.bc_tag is not BoundaryCondition.NEUMANN:
        raise CertificateError("certificates are assembled on the Neumann pair")
    if dirichlet.bc_tag is not BoundaryCondition.DIRICHLET:
        raise CertificateError("the U basis must come from a Dirichlet spectrum")
    if not 0 <= k <= dirichlet.count:
        raise CertificateError(f"k={k} outside the {dirichlet.count} available Dirichlet eigenvectors")
    if dirichlet.mesh is None or dirichlet.mesh.mesh_id != pair.mesh.mesh_id:
        raise CertificateError("Dirichlet spectrum and Neumann pair live on different meshes")
    for trial in trials:
        if trial.values.shape != (pair.mesh.n_nodes,):
            raise CertificateError(
                f"trial {trial.label} has shape {trial.values.shape}, expected ({pair.mesh.n_nodes},)"
            )
    if k + len(trials) == 0:
        raise CertificateError("empty trial space")

    blocks = [pair.restrict(dirichlet.nodal_vectors()[:, :k])]
    blocks += [pair.restrict(trial.values)[:, None] for trial in trials]
    basis = _normalized_basis(pair, np.hstack(blocks).astype(complex))
    gram = _hermitian(basis.conj().T @ (pair.M @ basis))
    stiffness = _hermitian(basis.conj().T @ (pair.K @ basis))

    kept = list(range(basis.shape[1]))
    dropped = []
    while True:
        smallest, vectors = np.linalg.eigh(gram[np.ix_(kept, kept)])
        if smallest[0] > gram_threshold:
            break
        candidates = [i for i, column in enumerate(kept) if column >= k]
        if not candidates:
            raise CertificateError(
                f"Dirichlet basis is linearly dependent (Gram eigenvalue {smallest[0]:.3e})"
            )
        weakest = max(candidates, key=lambda i: abs(vectors[i, 0]))
        column = kept.pop(weakest)
        dropped.append(trials[column - k].label)
        logger.warning(
            f"⚠️  Dropped trial {trials[column - k].label}: Gram eigenvalue {smallest[0]:.3e} "
            f"below {gram_threshold:.0e}"
        )

    block = np.ix_(kept, kept)
    projected = scipy.linalg.eigh(stiffness[block], gram[block], eigvals_only=True)
    q_max = float(projected[-1])
    kept_trials = [trials[column - k] for column in kept if column >= k]
    bound = lambda_target * (1.0 + rtol) + config.verdict_slack + allowance
    passed = q_max <= bound

    certificate = Certificate(
        lambda_target=float(lambda_target),
        k=k,
        requested_r=len(trials),
        r=len(kept_trials),
        trial_labels=[trial.label for trial in kept_trials],
        trial_constructions=[trial.construction for trial in kept_trials],
        dropped_trials=dropped,
        q_max=q_max,
        projected_eigenvalues=projected.tolist(),
        min_gram_eigenvalue=float(smallest[0]),
        independent=not dropped,
        passed=passed,
        mesh_id=pair.mesh.mesh_id,
        mesh_size_h=pair.mesh.mesh_size_h,
        allowance=float(allowance),
    )
    logger.info(
        f"{'✅' if passed else '❌'} Certificate k={k}, r={certificate.r}: q_max = {q_max:.10g} "
        f"vs lambda = {lambda_target:.10g}"
    )
    return certificate


def certificate_consistency(certificate: Certificate, neumann: Spectrum) -> bool:
    """mu_{k+r} <= q_max on the same discrete pencil"""
    index = certificate.dimension - 1
    if index < 0 or index >= neumann.count:
        return False
    return bool(neumann.eigenvalues[index] <= certificate.q_max + CONSISTENCY_SLACK)


def certify_ordering(mesh: Mesh, coeffs: CoefficientSet, k: int, trial_kind: str = "plane_wave",
                     theorem_name: str = "trivial", levels: int = 3,
                     phase: Optional[Phase] = None,
                     eigenpairs: Optional[Eigenpairs] = None,
                     directions: Optional[Sequence[Sequence[float]]] = None,
                     rotations: Sequence[float] = (0.0,),
                     context: Optional[HypothesisContext] = None,
                     quadrature_order: Optional[int] = None,
                     solver: Optional[Solver] = None,
                     executor: Optional[Executor] = None,
                     meshes: Optional[Sequence[Mesh]] = None) -> CertificationReport:
    """
    Certificate pipeline on the finest level of a refinement chain

    Plane-wave trials are first built at the extrapolated lambda_k and then
    rebuilt on every level at that level's discrete lambda_k. On chains of
    three or more levels the finest certificate is judged against the
    extrapolated q_max, since the plane-wave excess only vanishes as h -> 0.
    Derivative trials use the finest eigenfunction.
    """
    if k < 1:
        raise CertificateError(f"k must be at least 1, got {k}")
    chain = _meshes(mesh, levels, meshes)
    finest_mesh = chain[-1]
    r_requested = len(rotations) if trial_kind == "plane_wave" else len(directions or [])

    solved = solve_nested(
        chain, coeffs,
        {BoundaryCondition.DIRICHLET: k + 2, BoundaryCondition.NEUMANN: k + r_requested + 2},
        quadrature_order, solver, executor,
    )
    d_spectra, d_pairs = solved[BoundaryCondition.DIRICHLET]
    n_spectra, n_pairs = solved[BoundaryCondition.NEUMANN]
    lambdas = extrapolated_eigenvalues(d_spectra, d_pairs)
    lam = lambdas[k - 1]
    finest_dirichlet, neumann_pair = d_spectra[-1], n_pairs[-1]
    discrete = float(finest_dirichlet.eigenvalues[k - 1])

    if trial_kind == "plane_wave":
        if phase is None and eigenpairs is None:
            if coeffs.A is not None:
                _, eigenpairs = check_constant_eigenpair(coeffs.A, sample_points(chain[0]))
            else:
                basepoint = context.basepoint if context and context.basepoint is not None else chain[0].nodes[0]
                phase = construct_harmonic_phase(coeffs.rho, basepoint, chain[0])

        def build(target_mesh, mu):
            return build_plane_wave_trials(target_mesh, coeffs, mu, phase, eigenpairs, rotations)
    elif trial_kind == "derivative":
        fixed = build_derivative_trials(finest_dirichlet, k - 1, directions or [], mass=neumann_pair.M)

        def build(target_mesh, mu):
            return fixed
    else:
        raise CertificateError(f"unknown trial kind '{trial_kind}'; use plane_wave or derivative")

    certificates = [
        assemble_certificate(neumann_pair, finest_dirichlet, k, build(finest_mesh, lam.value), lam.value),
    ]
    limit = {}
    if trial_kind == "plane_wave" and len(chain) >= 3:
        level_certificates, limit = _limit_certificates(chain, d_spectra, n_pairs, k, lam, build)
        certificates += level_certificates
    else:
        certificates.append(
            assemble_certificate(neumann_pair, finest_dirichlet, k, build(finest_mesh, discrete), discrete)
        )
    neumann = n_spectra[-1]
    consistent = certificate_consistency(certificates[-1], neumann)
    if not consistent:
        logger.error("❌ Neumann spectrum disagrees with the certificate bound")

    hypotheses = run_hypotheses(theorem_name, chain[0], coeffs, lambdas[0].value, k,
                                certificates[-1].r, context)
    return CertificationReport(
        theorem_name=theorem_name,
        k=k,
        trial_kind=trial_kind,
        lambda_k=lam,
        lambda_k_discrete=discrete,
        certificates=certificates,
        neumann_eigenvalues=neumann.eigenvalues.tolist(),
        consistent=consistent,
        hypotheses=hypotheses,
        **limit,
    )


def _limit_certificates(chain: Sequence[Mesh], d_spectra: Sequence[Spectrum], n_pairs: Sequence[OperatorPair],
                        k: int, lam: ExtrapolatedValue,
                        build: Callable[[Mesh, float], List[TrialVector]]) -> Tuple[List[Certificate], dict]:
    """
    One discrete certificate per level, the finest judged against the refinement limit

    q_max is extrapolated over the last three levels like lambda_k. The
    finest bound is widened by the part of its excess q_max - lambda_k that
    the two limits do not share, plus both error bars, so the finest
    certificate passes when the limit of q_max stays at or below the limit
    of lambda_k.
    """
    targets = [float(spectrum.eigenvalues[k - 1]) for spectrum in d_spectra]
    trials = [build(level_mesh, target) for level_mesh, target in zip(chain, targets)]
    certificates = [
        assemble_certificate(pair, spectrum, k, level_trials, target)
        for pair, spectrum, level_trials, target in zip(n_pairs, d_spectra, trials, targets)
    ]
    q_levels = [certificate.q_max for certificate in certificates]
    q_limit = extrapolate(q_levels[-3:])

    finest_q, finest_lambda = q_levels[-1], targets[-1]
    errors = q_limit.error_estimate + lam.error_estimate
    allowance = max(0.0, (finest_q - q_limit.value) - (finest_lambda - lam.value) + errors)
    certificates[-1] = assemble_certificate(n_pairs[-1], d_spectra[-1], k, trials[-1], finest_lambda,
                                            allowance=allowance)

    margin = lam.value + finest_lambda * config.certificate_rtol - q_limit.value
    limit_verdict = decide_verdict(margin, errors + config.verdict_slack)
    h = chain[-1].mesh_size_h
    logger.info(
        f"📏 q_max -> {q_limit.value:.10g} +/- {q_limit.error_estimate:.1e} against lambda_{k} -> "
        f"{lam.value:.10g}: {limit_verdict.value}"
    )
    return certificates, {
        "level_q_max": q_levels,
        "level_excess": [q - target for q, target in zip(q_levels, targets)],
        "q_max_limit": q_limit,
        "c_fit": allowance / (finest_lambda * h**2),
        "limit_verdict": limit_verdict,
    }


def rotation_certificates(pair: OperatorPair, dirichlet: Spectrum, k: int, coeffs: CoefficientSet,
                          mu_target: float, phase: Optional[Phase] = None,
                          eigenpairs: Optional[Eigenpairs] = None,
                          rotations: Sequence[float] = DEFAULT_ROTATIONS) -> RotationFamily:
    """One single-trial certificate per rotation, and the Gram spectrum of all rotations together"""
    trials = build_plane_wave_trials(pair.mesh, coeffs, mu_target, phase, eigenpairs, rotations)
    certificates = [assemble_certificate(pair, dirichlet, k, [trial], mu_target) for trial in trials]

    columns = _normalized_basis(pair, np.column_stack([pair.restrict(t.values) for t in trials]))
    gram = _hermitian(columns.conj().T @ (pair.M @ columns))
    smallest = float(np.linalg.eigvalsh(gram)[0])
    return RotationFamily(
        certificates=certificates,
        rotations=[trial.construction["rotation"] for trial in trials],
        family_min_gram_eigenvalue=smallest,
        family_independent=smallest > config.gram_threshold,
    )


def plane_wave_quotient_fit(meshes: Sequence[Mesh], coeffs: CoefficientSet, mu_target: float,
                            phase: ScalarField,
                            quadrature_order: Optional[int] = None) -> QuotientFit:
    """Least-squares C in q(w_h) / mu - 1 = C h^2, and the smallest C bounding every level"""
    sizes, quotients = [], []
    for mesh in meshes:
        pair = assemble(mesh, coeffs, quadrature_order)
        trial = build_plane_wave_trials(mesh, coeffs, mu_target, phase=phase, rotations=(0.0,))[0]
        sizes.append(mesh.mesh_size_h)
        quotients.append(rayleigh_quotient(trial.values, pair))

    h2 = np.asarray(sizes) ** 2
    excess = np.asarray(quotients) / mu_target - 1.0
    return QuotientFit(
        mu_target=mu_target,
        mesh_sizes=sizes,
        quotients=quotients,
        c_fit=float(h2 @ excess / (h2 @ h2)),
        c_bound=float(max(0.0, (excess / h2).max())),
    )


# ---------------------------------------------------------------------------
# Integration by parts on convex domains
# ---------------------------------------------------------------------------

def _curvature_forms(mesh: Mesh, b: np.ndarray) -> np.ndarray:
    """b^T B b at every boundary facet, read at the facet midpoint"""
    midpoints = mesh.nodes[mesh.facet_nodes].mean(axis=1)
    return np.array([b @ curvature_at(mesh, point).matrix_B @ b for point in midpoints])


def verify_ibp_identity(mesh: Mesh, phi: ScalarField, b: Sequence[float],
                        quadrature_order: int = 4) -> IBPReport:
    """
    Check the boundary identity for F = grad(phi) with phi = 0 on the boundary

    Interior integrals use element quadrature on the mesh; the boundary
    integral uses facet quadrature, with points projected onto the circle
    for disk meshes and B = 0 on polygon sides.
    """
    if mesh.dimension != 2:
        raise HypothesisError("the integration-by-parts identity is checked on 2D meshes")
    if phi.gradient is None or phi.hessian is None:
        raise HypothesisError(f"test function {phi.name} needs an analytic gradient and Hessian")
    b = np.asarray(b, dtype=float)

    scale = max(1.0, float(np.abs(phi.evaluate(mesh.nodes)).max()))
    boundary = float(np.abs(phi.evaluate(mesh.nodes[mesh.boundary_nodes])).max())
    if boundary > 1e-10 * scale:
        raise HypothesisError(f"test function {phi.name} does not vanish on the boundary (max {boundary:.3e})")

    points, weights = quadrature_points(mesh, quadrature_order)
    hessian = phi.hess(points.reshape(-1, 2))
    directional = hessian @ b
    w = weights.ravel()
    lhs = float(w @ np.einsum("ni,ni->n", directional, directional))
    interior = float(w @ (np.trace(hessian, axis1=1, axis2=2) * (directional @ b)))

    facet_points, facet_weights = facet_quadrature(mesh, quadrature_order)
    flat = facet_points.reshape(-1, 2)
    if mesh.circle is not None:
        center = np.asarray(mesh.circle.center, dtype=float)
        offset = flat - center
        flat = center + mesh.circle.radius * offset / np.linalg.norm(offset, axis=1, keepdims=True)
    grad = phi.grad(flat)
    squared = np.einsum("ni,ni->n", grad, grad).reshape(facet_weights.shape)
    forms = _curvature_forms(mesh, b)
    boundary_term = 0.5 * float(np.sum(facet_weights * squared * forms[:, None]))

    rhs = interior - boundary_term
    residual = abs(lhs - rhs) / abs(lhs) if lhs != 0 else abs(lhs - rhs)
    report = IBPReport(
        lhs=lhs,
        interior_term=interior,
        boundary_term=boundary_term,
        rhs=rhs,
        residual=residual,
        mesh_size_h=mesh.mesh_size_h,
        n_elements=mesh.n_elements,
        boundary_kind="circle" if mesh.circle is not None else "polygon",
        direction=b.tolist(),
    )
    logger.info(f"🧮 IBP identity on h={mesh.mesh_size_h:.4g}: lhs {lhs:.10g}, rhs {rhs:.10g}, "
                f"relative residual {residual:.3e}")
    return report


def ibp_convergence(meshes: Sequence[Mesh], phi: ScalarField, b: Sequence[float],
                    quadrature_order: int = 4) -> IBPConvergence:
    """Identity residuals across meshes and the observed order between consecutive levels"""
    reports = [verify_ibp_identity(mesh, phi, b, quadrature_order) for mesh in meshes]
    orders: List[Optional[float]] = []
    for coarse, fine in zip(reports, reports[1:]):
        if min(coarse.residual, fine.residual) <= 1e-13 or fine.mesh_size_h >= coarse.mesh_size_h:
            orders.append(None)
            continue
        orders.append(math.log(coarse.residual / fine.residual) / math.log(coarse.mesh_size_h / fine.mesh_size_h))
    return IBPConvergence(reports=reports, observed_orders=orders)
