"""
Tests for the eigensolvers, the 1D oracle and Richardson extrapolation
"""
import math

import numpy as np
import pytest

from src.spectral_ordering.config import config
from src.spectral_ordering.eigen import (
    cluster_eigenvalues,
    extrapolate,
    extrapolate_chain,
    m_orthonormality_defect,
    solve_interval_ode,
    solve_lowest,
    spectral_shift,
)
from src.spectral_ordering.errors import ConvergenceError, EigenSolverError, MeshError
from src.spectral_ordering.fem import BoundaryCondition, operator_pairs
from src.spectral_ordering.fields import CoefficientSet, constant_field, laplacian_coefficients
from src.spectral_ordering.geometry import make_interval, make_polygon_mesh, rectangle_vertices, refine, refinement_chain


@pytest.fixture
def square_pairs():
    mesh = make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.2)
    return operator_pairs(mesh, laplacian_coefficients())


class TestSolveLowest:
    """Dense and shift-invert generalized eigensolvers"""

    def test_dense_spectrum(self, square_pairs):
        _, dirichlet = square_pairs
        spectrum = solve_lowest(dirichlet, 4, method="dense")
        assert spectrum.count == 4
        assert np.all(np.diff(spectrum.eigenvalues) >= 0)
        assert spectrum.residuals.max() <= 1e-8
        assert m_orthonormality_defect(spectrum, dirichlet) < 1e-10
        assert spectrum.solver == "dense"
        assert spectrum.bc_tag is BoundaryCondition.DIRICHLET
        # conforming P1 overestimates 2 pi^2
        assert 2 * math.pi**2 < spectrum.eigenvalues[0] < 1.2 * 2 * math.pi**2

    def test_shift_invert_agrees_with_dense(self, square_pairs):
        neumann, _ = square_pairs
        dense = solve_lowest(neumann, 4, method="dense")
        lanczos = solve_lowest(neumann, 4, method="shift-invert")
        np.testing.assert_allclose(lanczos.eigenvalues, dense.eigenvalues, rtol=1e-9, atol=1e-10)
        assert lanczos.solver == "shift-invert"
        assert m_orthonormality_defect(lanczos, neumann) < 1e-10

    def test_neumann_ground_state(self, square_pairs):
        neumann, _ = square_pairs
        spectrum = solve_lowest(neumann, 2)
        assert abs(spectrum.eigenvalues[0]) < 1e-10
        constant = spectrum.eigenvectors[:, 0]
        np.testing.assert_allclose(constant, constant[0], rtol=1e-8)

    def test_sign_convention(self, square_pairs):
        _, dirichlet = square_pairs
        vectors = solve_lowest(dirichlet, 3).eigenvectors
        pivots = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(3)]
        assert np.all(pivots > 0)

    @pytest.mark.parametrize("count", [0, 10_000])
    def test_count_out_of_range(self, square_pairs, count):
        with pytest.raises(EigenSolverError):
            solve_lowest(square_pairs[1], count)

    def test_unknown_method(self, square_pairs):
        with pytest.raises(EigenSolverError):
            solve_lowest(square_pairs[1], 2, method="power")

    def test_residual_target_enforced(self, square_pairs, monkeypatch):
        monkeypatch.setattr(config, "residual_tolerance", 1e-300)
        with pytest.raises(ConvergenceError) as excinfo:
            solve_lowest(square_pairs[1], 2)
        assert len(excinfo.value.residuals) == 2

    def test_serialization(self, square_pairs):
        payload = solve_lowest(square_pairs[1], 3).to_dict()
        assert payload["bc"] == "dirichlet"
        assert len(payload["eigenvalues"]) == 3
        assert payload["error_estimates"] is None

    def test_shift_lies_below_the_spectrum(self):
        interval = make_interval(0.0, 1.0, 16)
        neumann, _ = operator_pairs(interval, laplacian_coefficients())
        assert spectral_shift(neumann) == pytest.approx(-1.0, abs=1e-9)
        well = CoefficientSet(rho=constant_field(1.0), V=constant_field(-50.0))
        for pair in operator_pairs(interval, well):
            assert spectral_shift(pair) < solve_lowest(pair, 1, method="dense").eigenvalues[0]

    @pytest.mark.slow
    def test_shift_invert_agrees_on_a_large_pencil(self):
        coarse = make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.1)
        fine = refine(refine(coarse))
        neumann, _ = operator_pairs(fine, laplacian_coefficients())
        assert neumann.n_dofs >= 1000
        dense = solve_lowest(neumann, 5, method="dense")
        lanczos = solve_lowest(neumann, 5, method="shift-invert")
        np.testing.assert_allclose(lanczos.eigenvalues, dense.eigenvalues, rtol=1e-8, atol=1e-9)


class TestGalerkinMonotonicity:
    """Nested P1 spaces never raise the lowest eigenvalues"""

    @pytest.mark.parametrize("bc", ["neumann", "dirichlet"])
    def test_refinement_lowers_eigenvalues(self, bc):
        coarse = make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.15)
        fine = refine(coarse)
        index = 0 if bc == "neumann" else 1
        count = 10
        before = solve_lowest(operator_pairs(coarse, laplacian_coefficients())[index], count, method="dense")
        after = solve_lowest(operator_pairs(fine, laplacian_coefficients())[index], count, method="dense")
        slack = 1e-9 * np.maximum(1.0, before.eigenvalues)
        assert np.all(after.eigenvalues <= before.eigenvalues + slack)

    def test_interval_refinement(self):
        coarse = make_interval(0.0, 2.0, 12)
        for pair_coarse, pair_fine in zip(operator_pairs(coarse, laplacian_coefficients()),
                                          operator_pairs(refine(coarse), laplacian_coefficients())):
            before = solve_lowest(pair_coarse, 10, method="dense").eigenvalues
            after = solve_lowest(pair_fine, 10, method="dense").eigenvalues
            assert np.all(after <= before + 1e-9 * np.maximum(1.0, before))


class TestClusters:
    """Grouping of (near-)repeated eigenvalues"""

    def test_cluster_ids(self):
        ids = cluster_eigenvalues([1.0, 1.0 + 1e-9, 2.0, 5.0, 5.0])
        assert ids.tolist() == [0, 0, 1, 2, 2]

    def test_custom_tolerance(self):
        assert cluster_eigenvalues([1.0, 1.01], rtol=0.1).tolist() == [0, 0]


class TestIntervalOracle:
    """Finite-difference reference spectra on intervals"""

    def test_dirichlet_laplacian(self):
        spectrum = solve_interval_ode(laplacian_coefficients(), 0.0, 1.0, BoundaryCondition.DIRICHLET, 3,
                                      grid_n=2000)
        exact = np.array([1.0, 4.0, 9.0]) * math.pi**2
        np.testing.assert_allclose(spectrum.eigenvalues, exact, rtol=1e-5)
        assert spectrum.solver == "ode"
        assert np.all(np.abs(spectrum.eigenvalues - exact) <= 1.01 * spectrum.error_estimates + 1e-12)

    def test_neumann_laplacian(self):
        spectrum = solve_interval_ode(laplacian_coefficients(), 0.0, 2.0, BoundaryCondition.NEUMANN, 3,
                                      grid_n=2000)
        assert abs(spectrum.eigenvalues[0]) < 1e-8
        np.testing.assert_allclose(spectrum.eigenvalues[1:], [math.pi**2 / 4, math.pi**2], rtol=1e-5)

    def test_density_scaling(self):
        heavy = CoefficientSet(rho=constant_field(4.0))
        spectrum = solve_interval_ode(heavy, 0.0, 1.0, BoundaryCondition.DIRICHLET, 1, grid_n=500,
                                      estimate_error=False)
        plain = solve_interval_ode(laplacian_coefficients(), 0.0, 1.0, BoundaryCondition.DIRICHLET, 1,
                                   grid_n=500, estimate_error=False)
        assert spectrum.eigenvalues[0] == pytest.approx(plain.eigenvalues[0] / 4.0, rel=1e-12)
        assert spectrum.error_estimates is None

    def test_invalid_inputs(self):
        with pytest.raises(EigenSolverError):
            solve_interval_ode(laplacian_coefficients(), 1.0, 0.0, BoundaryCondition.DIRICHLET, 1)
        with pytest.raises(EigenSolverError):
            solve_interval_ode(laplacian_coefficients(), 0.0, 1.0, BoundaryCondition.DIRICHLET, 10, grid_n=5)

    def test_grid_spectrum_has_no_mesh(self):
        spectrum = solve_interval_ode(laplacian_coefficients(), 0.0, 1.0, BoundaryCondition.DIRICHLET, 1,
                                      grid_n=50, estimate_error=False)
        with pytest.raises(EigenSolverError):
            spectrum.eigenfunction(0)


class TestExtrapolation:
    """Richardson extrapolation over nested meshes"""

    def test_quadratic_convergence(self):
        result = extrapolate([11.0, 10.25, 10.0625])
        assert result.value == pytest.approx(10.0)
        assert result.observed_order == pytest.approx(2.0)
        assert result.error_estimate == pytest.approx(0.0625)
        assert not result.flagged

    def test_converged_values(self):
        result = extrapolate([3.0, 3.0, 3.0])
        assert result.value == 3.0
        assert result.error_estimate == 0.0
        assert result.observed_order is None

    def test_non_monotone_is_flagged(self):
        result = extrapolate([1.0, 2.0, 1.5])
        assert result.flagged
        assert result.value == 1.5
        assert result.error_estimate == pytest.approx(1.0)

    def test_needs_three_values(self):
        with pytest.raises(EigenSolverError):
            extrapolate([1.0, 2.0])

    def test_chain_on_interval(self):
        chain = refinement_chain(make_interval(0.0, 1.0, 16), 3)
        pairs = [operator_pairs(mesh, laplacian_coefficients())[1] for mesh in chain]
        spectra = [solve_lowest(pair, 3) for pair in pairs]
        values = extrapolate_chain(spectra, [pair.M for pair in pairs])
        exact = np.array([1.0, 4.0, 9.0]) * math.pi**2
        for result, target in zip(values, exact):
            assert result.value == pytest.approx(target, rel=1e-4)
            assert abs(result.value - target) <= result.error_estimate
            assert result.observed_order == pytest.approx(2.0, abs=0.05)

    def test_chain_requires_nesting(self):
        meshes = [make_interval(0.0, 1.0, n) for n in (8, 16, 32)]
        pairs = [operator_pairs(mesh, laplacian_coefficients())[1] for mesh in meshes]
        spectra = [solve_lowest(pair, 2) for pair in pairs]
        with pytest.raises(MeshError):
            extrapolate_chain(spectra, [pair.M for pair in pairs])
