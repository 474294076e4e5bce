"""
Tests for the hypothesis checkers
"""
import numpy as np
import pytest

from src.spectral_ordering.conditions import (
    check_axis_symmetry,
    check_constant_eigenpair,
    check_convexity_combination,
    check_directional_invariance,
    check_div_curl_conditions,
    check_harmonic_gradient,
    check_log_harmonic,
    check_log_subharmonic,
    check_strict_convexity_or_curvature,
    sample_points,
)
from src.spectral_ordering.errors import FieldError
from src.spectral_ordering.fields import (
    ScalarField,
    block_matrix_field,
    constant_field,
    directional_field,
    exp_inverse_density,
    gaussian_density,
    identity_matrix_field,
    paraboloid_phase,
    quadratic_density,
    quadratic_field,
    rotating_matrix_field,
    saddle_phase,
    shifted_power_density,
)
from src.spectral_ordering.geometry import make_disk_mesh, make_interval, make_polygon_mesh, rectangle_vertices


@pytest.fixture
def centered_square():
    return make_polygon_mesh(rectangle_vertices(-1.0, -1.0, 1.0, 1.0), 0.5)


@pytest.fixture
def offset_square():
    return make_polygon_mesh(rectangle_vertices(1.0, 1.0, 2.0, 2.0), 0.25)


class TestSampling:
    """Quasi-random interior samples"""

    def test_points_are_inside(self, offset_square):
        points = sample_points(offset_square, 50, include_centroids=False)
        assert points.shape == (50, 2)
        assert np.all((points > 1.0) & (points < 2.0))

    def test_centroids_appended(self, offset_square):
        points = sample_points(offset_square, 50)
        assert points.shape == (50 + offset_square.n_elements, 2)

    def test_interval(self):
        points = sample_points(make_interval(0.0, 2.0, 8), 10, include_centroids=False)
        assert points.shape == (10, 1)
        assert np.all((points > 0.0) & (points < 2.0))

    def test_deterministic(self, offset_square):
        np.testing.assert_array_equal(sample_points(offset_square, 30), sample_points(offset_square, 30))


class TestConvexity:
    """Convexity of lambda1 rho - V"""

    def test_convex_density_passes(self, centered_square):
        report = check_convexity_combination(quadratic_density(1.0, 1.0), None, 5.0,
                                             sample_points(centered_square, 40))
        assert report.passed
        assert report.details["min_eigenvalue"] == pytest.approx(10.0)
        assert report.details["analytic_hessians"]

    def test_concave_density_fails(self, centered_square):
        report = check_convexity_combination(quadratic_field(4.0, -1.0), None, 1.0,
                                             sample_points(centered_square, 40))
        assert not report.passed
        assert report.max_residual == pytest.approx(2.0)
        assert len(report.witness) == 2

    def test_potential_enters_with_minus_sign(self, centered_square):
        points = sample_points(centered_square, 20)
        report = check_convexity_combination(constant_field(1.0), quadratic_field(0.0, -1.0), 2.0, points)
        assert report.passed
        report = check_convexity_combination(constant_field(1.0), quadratic_field(0.0, 1.0), 2.0, points)
        assert not report.passed

    def test_requires_hessians_when_asked(self, centered_square):
        bare = ScalarField(name="bare", evaluator=lambda x: x[:, 0] ** 2)
        with pytest.raises(FieldError):
            check_convexity_combination(bare, None, 1.0, sample_points(centered_square, 10),
                                        allow_finite_differences=False)

    def test_restricted_to_subspace(self, centered_square):
        rho = directional_field("exp", [0.0, 1.0])
        points = sample_points(centered_square, 20)
        report = check_convexity_combination(rho, None, 1.0, points, directions=[[0.0, 1.0]])
        assert report.condition_name == "directional_convexity"
        assert report.passed
        assert report.details["strictly_convex_somewhere"]

    def test_strict_convexity_or_curvature(self, centered_square):
        flat = constant_field(1.0)
        disk = make_disk_mesh((0.0, 0.0), 1.0, 0.5)
        assert check_strict_convexity_or_curvature(flat, None, 1.0, disk, sample_points(disk, 20)).passed
        report = check_strict_convexity_or_curvature(flat, None, 1.0, centered_square,
                                                     sample_points(centered_square, 20))
        assert not report.passed
        assert report.details["strictly_curved_boundary"] is False

        convex = quadratic_density(1.0, 1.0)
        assert check_strict_convexity_or_curvature(convex, None, 1.0, centered_square,
                                                   sample_points(centered_square, 20)).passed


class TestDirectionalInvariance:
    """Invariance of rho and V along directions"""

    def test_invariant_direction(self, centered_square):
        rho = directional_field("exp", [1.0, 0.0])
        report = check_directional_invariance(rho, None, [[0.0, 1.0]], sample_points(centered_square, 30))
        assert report.passed
        assert report.details["invariant_dimension"] == 1

    def test_varying_direction(self, centered_square):
        rho = directional_field("exp", [1.0, 0.0])
        report = check_directional_invariance(rho, None, [[1.0, 0.0]], sample_points(centered_square, 30))
        assert not report.passed
        assert report.details["invariant_dimension"] == 0

    def test_empty_basis(self, centered_square):
        with pytest.raises(FieldError):
            check_directional_invariance(constant_field(1.0), None, [], sample_points(centered_square, 5))


class TestLogHarmonicity:
    """Signs of Delta log rho"""

    def test_exp_inverse_is_log_harmonic(self, offset_square):
        assert check_log_harmonic(exp_inverse_density(0.5), sample_points(offset_square, 40)).passed

    def test_gaussian_is_not_log_harmonic(self, offset_square):
        report = check_log_harmonic(gaussian_density(1.0), sample_points(offset_square, 40))
        assert not report.passed
        assert report.max_residual == pytest.approx(1.0, abs=1e-4)

    def test_log_subharmonic(self, offset_square):
        points = sample_points(offset_square, 40)
        assert check_log_subharmonic(gaussian_density(1.0), points).passed
        assert check_log_subharmonic(exp_inverse_density(0.5), points).passed
        assert not check_log_subharmonic(gaussian_density(-1.0), points).passed

    def test_needs_planar_points(self):
        with pytest.raises(FieldError):
            check_log_harmonic(constant_field(1.0), np.array([[0.5]]))


class TestHarmonicGradient:
    """Delta h = 0 and |grad h|^2 = rho"""

    def test_saddle_phase_matches_radial_density(self, offset_square):
        report = check_harmonic_gradient(saddle_phase(), quadratic_field(0.0, 1.0),
                                         sample_points(offset_square, 40))
        assert report.passed
        assert report.max_residual < 1e-12

    def test_paraboloid_is_not_harmonic(self, offset_square):
        report = check_harmonic_gradient(paraboloid_phase(), quadratic_field(0.0, 1.0),
                                         sample_points(offset_square, 40))
        assert not report.passed
        assert report.details["max_laplacian"] == pytest.approx(2.0)
        assert report.details["max_density_mismatch"] < 1e-12


class TestConstantEigenpair:
    """Constant eigenvectors of a varying matrix field"""

    def test_block_field_has_one_pair(self, centered_square):
        A = block_matrix_field(1.0, directional_field("one_plus_half_sin_square", [0.0, 1.0]))
        report, pairs = check_constant_eigenpair(A, sample_points(centered_square, 40))
        assert report.passed
        assert len(pairs) == 1
        lam, xi = pairs[0]
        assert lam == pytest.approx(1.0)
        np.testing.assert_allclose(xi, [1.0, 0.0], atol=1e-12)

    def test_identity_has_two_pairs(self, centered_square):
        report, pairs = check_constant_eigenpair(identity_matrix_field(), sample_points(centered_square, 10))
        assert report.passed
        assert len(pairs) == 2

    def test_rotating_field_has_none(self, centered_square):
        report, pairs = check_constant_eigenpair(rotating_matrix_field((1.0, 2.0), 1.0),
                                                 sample_points(centered_square, 40))
        assert not report.passed
        assert pairs == []


class TestDivCurl:
    """Div-curl conditions on a unit vector field"""

    def test_constant_direction_passes(self, offset_square):
        A = block_matrix_field(1.0, directional_field("one_plus_half_sin_square", [0.0, 1.0]))
        report = check_div_curl_conditions(A, lambda x: np.tile([1.0, 0.0], (x.shape[0], 1)), offset_square)
        assert report.passed
        assert report.details["max_unit_defect"] == 0.0

    def test_radial_direction_fails(self, offset_square):
        def radial(x):
            return x / np.linalg.norm(x, axis=1)[:, None]

        report = check_div_curl_conditions(identity_matrix_field(), radial, offset_square)
        assert not report.passed
        assert report.details["max_divergence"] > 0.3


class TestAxisSymmetry:
    """Evenness under coordinate reflections"""

    def test_even_density_on_centered_square(self, centered_square):
        report = check_axis_symmetry(centered_square, shifted_power_density(1.0, 2.0), None,
                                     sample_points(centered_square, 30))
        assert report.passed
        assert report.details["vertex_set_symmetric"]

    def test_odd_density(self, centered_square):
        report = check_axis_symmetry(centered_square, directional_field("exp", [1.0, 0.0]), None,
                                     sample_points(centered_square, 30))
        assert not report.passed

    def test_off_center_domain(self, offset_square):
        report = check_axis_symmetry(offset_square, constant_field(1.0), None, sample_points(offset_square, 10))
        assert not report.passed
        assert report.details["vertex_set_symmetric"] is False

    def test_report_serializes(self, centered_square):
        report = check_axis_symmetry(centered_square, constant_field(1.0), None, sample_points(centered_square, 5))
        payload = report.to_dict()
        assert payload["condition_name"] == "axis_symmetry"
        assert payload["sample_count"] == 5 + centered_square.n_elements


def moved(f: ScalarField, Q: np.ndarray, c: np.ndarray) -> ScalarField:
    """f composed with the inverse of the isometry x -> Q x + c"""
    def pull(x):
        return (x - c) @ Q

    return ScalarField(
        name=f"moved({f.name})",
        evaluator=lambda x: f.evaluate(pull(x)),
        gradient=lambda x: f.grad(pull(x)) @ Q.T,
        hessian=lambda x: np.einsum("ia,nab,jb->nij", Q, f.hess(pull(x)), Q),
    )


ISOMETRIES = [
    (np.diag([-1.0, 1.0]), np.zeros(2)),
    (np.eye(2), np.array([2.5, -1.0])),
    (np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.3, 0.7])),
]


class TestEquivariance:
    """Moving the domain and the fields together leaves every verdict unchanged"""

    @pytest.mark.parametrize("Q, c", ISOMETRIES)
    def test_convexity(self, centered_square, Q, c):
        points = sample_points(centered_square)
        for rho in (quadratic_density(1.0, 1.0), quadratic_field(1.0, -1.0)):
            before = check_convexity_combination(rho, None, 2.0, points)
            after = check_convexity_combination(moved(rho, Q, c), None, 2.0, points @ Q.T + c)
            assert after.passed == before.passed
            assert after.max_residual == pytest.approx(before.max_residual, abs=1e-10)

    @pytest.mark.parametrize("Q, c", ISOMETRIES)
    def test_log_subharmonicity(self, centered_square, Q, c):
        points = sample_points(centered_square)
        for rho in (gaussian_density(0.5), gaussian_density(-0.5)):
            before = check_log_subharmonic(rho, points)
            after = check_log_subharmonic(moved(rho, Q, c), points @ Q.T + c)
            assert after.passed == before.passed

    @pytest.mark.parametrize("Q, c", ISOMETRIES)
    def test_harmonic_gradient(self, offset_square, Q, c):
        points = sample_points(offset_square)
        rho, h = quadratic_field(0.0, 1.0), saddle_phase()
        before = check_harmonic_gradient(h, rho, points)
        after = check_harmonic_gradient(moved(h, Q, c), moved(rho, Q, c), points @ Q.T + c)
        assert before.passed
        assert after.passed
        assert after.max_residual == pytest.approx(before.max_residual, abs=1e-10)
