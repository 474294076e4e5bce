"""
Tests for mesh construction, refinement and boundary curvature
"""
import math

import numpy as np
import pytest

from src.spectral_ordering.errors import CornerPointError, MeshError
from src.spectral_ordering.geometry import (
    curvature_at,
    make_disk_mesh,
    make_interval,
    make_polygon_mesh,
    prolongation,
    read_mesh,
    rectangle_vertices,
    refine,
    refinement_chain,
    write_mesh,
)


class TestIntervalMesh:
    """Uniform interval meshes"""

    def test_uniform_nodes(self):
        mesh = make_interval(0.0, 1.0, 4)
        assert mesh.dimension == 1
        assert mesh.n_nodes == 5
        assert mesh.n_elements == 4
        assert mesh.mesh_size_h == pytest.approx(0.25)
        assert mesh.measure == pytest.approx(1.0)
        assert sorted(mesh.boundary_nodes.tolist()) == [0, 4]
        assert mesh.facet_normals.ravel().tolist() == [-1.0, 1.0]

    def test_invalid_endpoints(self):
        with pytest.raises(MeshError):
            make_interval(1.0, 0.0, 4)

    def test_too_few_elements(self):
        with pytest.raises(MeshError):
            make_interval(0.0, 1.0, 1)

    def test_nodes_are_read_only(self):
        mesh = make_interval(0.0, 1.0, 4)
        with pytest.raises(ValueError):
            mesh.nodes[0, 0] = 5.0


class TestPolygonMesh:
    """Triangulation of simple polygons"""

    @pytest.fixture
    def square(self):
        return make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.25)

    def test_size_and_quality(self, square):
        assert square.dimension == 2
        assert square.mesh_size_h <= 0.25 + 1e-12
        assert square.min_angle_degrees >= 20.0
        assert square.measure == pytest.approx(1.0, abs=1e-12)

    def test_topology(self, square):
        assert square.euler_characteristic == 1
        assert np.all(square.element_measures > 0)
        assert len(square.corner_vertices) == 4

    def test_boundary_nodes_on_outline(self, square):
        boundary = square.nodes[square.boundary_nodes]
        on_edge = np.isclose(boundary, 0.0) | np.isclose(boundary, 1.0)
        assert np.all(on_edge.any(axis=1))
        assert square.interior_nodes.size > 0

    def test_outward_normals(self, square):
        start = square.nodes[square.facet_nodes[:, 0]]
        outward = start + 1e-3 * square.facet_normals
        inside = np.all((outward > 0) & (outward < 1), axis=1)
        assert not inside.any()

    def test_clockwise_input_is_reversed(self):
        clockwise = rectangle_vertices(0.0, 0.0, 2.0, 1.0)[::-1]
        mesh = make_polygon_mesh(clockwise, 0.5)
        assert mesh.measure == pytest.approx(2.0, abs=1e-12)
        assert np.all(mesh.element_measures > 0)

    def test_self_intersecting(self):
        with pytest.raises(MeshError):
            make_polygon_mesh([[0, 0], [1, 1], [1, 0], [0, 1]], 0.25)

    def test_collinear(self):
        with pytest.raises(MeshError):
            make_polygon_mesh([[0, 0], [1, 0], [2, 0]], 0.25)

    def test_too_few_vertices(self):
        with pytest.raises(MeshError):
            make_polygon_mesh([[0, 0], [1, 0]], 0.25)

    def test_non_positive_target(self):
        with pytest.raises(MeshError):
            make_polygon_mesh(rectangle_vertices(0, 0, 1, 1), 0.0)


class TestDiskMesh:
    """Disks as inscribed regular polygons"""

    @pytest.fixture
    def disk(self):
        return make_disk_mesh((0.0, 0.0), 1.0, 0.2)

    def test_records_circle(self, disk):
        assert disk.circle is not None
        assert disk.circle.radius == 1.0
        assert len(disk.corner_vertices) == 0

    def test_outline_on_circle(self, disk):
        radii = np.linalg.norm(disk.outline, axis=1)
        np.testing.assert_allclose(radii, 1.0)
        assert len(disk.outline) % 2 == 0
        assert len(disk.outline) >= 8

    def test_measure_close_to_pi(self, disk):
        assert disk.measure < math.pi
        assert disk.measure == pytest.approx(math.pi, abs=0.03)
        boundary = np.linalg.norm(disk.nodes[disk.boundary_nodes], axis=1)
        assert boundary.min() > 0.99

    def test_invalid_radius(self):
        with pytest.raises(MeshError):
            make_disk_mesh((0.0, 0.0), -1.0, 0.2)


class TestRefinement:
    """Uniform nested refinement and prolongation"""

    def test_interval_refinement(self):
        fine = refine(make_interval(0.0, 1.0, 4))
        assert fine.n_elements == 8
        assert fine.mesh_size_h == pytest.approx(0.125)
        assert fine.measure == pytest.approx(1.0)

    def test_triangle_refinement(self):
        coarse = make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.5)
        fine = refine(coarse)
        assert fine.n_elements == 4 * coarse.n_elements
        assert fine.measure == pytest.approx(coarse.measure)
        assert fine.mesh_size_h == pytest.approx(coarse.mesh_size_h / 2)
        assert fine.min_angle_degrees == pytest.approx(coarse.min_angle_degrees)
        assert fine.euler_characteristic == 1
        assert fine.nested_parent is coarse

    def test_chain_length(self):
        chain = refinement_chain(make_interval(0.0, 1.0, 4), 3)
        assert len(chain) == 3
        assert [m.n_elements for m in chain] == [4, 8, 16]

    def test_prolongation_reproduces_linear_functions(self):
        chain = refinement_chain(make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.5), 3)
        coarse, fine = chain[0], chain[-1]

        def linear(nodes):
            return 1.0 + nodes[:, 0] + 2.0 * nodes[:, 1]

        transfer = prolongation(coarse, fine)
        assert transfer.shape == (fine.n_nodes, coarse.n_nodes)
        np.testing.assert_allclose(transfer @ linear(coarse.nodes), linear(fine.nodes), atol=1e-12)

    def test_prolongation_needs_nesting(self):
        with pytest.raises(MeshError):
            prolongation(make_interval(0.0, 1.0, 4), make_interval(0.0, 1.0, 8))


class TestCurvature:
    """Curvature queries on smooth boundary points"""

    @pytest.fixture
    def square(self):
        return make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.25)

    def test_unit_disk(self):
        disk = make_disk_mesh((0.0, 0.0), 1.0, 0.2)
        result = curvature_at(disk, (1.0, 0.0))
        assert result.kappa == pytest.approx(1.0)
        np.testing.assert_allclose(result.matrix_B, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(result.normal, [1.0, 0.0], atol=1e-12)

    def test_flat_side(self, square):
        result = curvature_at(square, (0.5, 0.0))
        assert result.kappa == 0.0
        np.testing.assert_allclose(result.matrix_B, np.zeros((2, 2)))
        np.testing.assert_allclose(result.normal, [0.0, -1.0], atol=1e-12)

    def test_corner(self, square):
        with pytest.raises(CornerPointError):
            curvature_at(square, (0.0, 0.0))

    def test_interior_point(self, square):
        with pytest.raises(MeshError):
            curvature_at(square, (0.5, 0.5))

    def test_interval(self):
        with pytest.raises(MeshError):
            curvature_at(make_interval(0.0, 1.0, 4), (0.0,))


class TestMeshText:
    """Text serialization"""

    def test_round_trip_polygon(self, tmp_path):
        mesh = make_polygon_mesh(rectangle_vertices(0.0, 0.0, 1.0, 1.0), 0.5)
        path = tmp_path / "square.mesh"
        write_mesh(mesh, path)
        loaded = read_mesh(path)
        np.testing.assert_array_equal(loaded.nodes, mesh.nodes)
        np.testing.assert_array_equal(loaded.elements, mesh.elements)
        np.testing.assert_array_equal(loaded.facet_nodes, mesh.facet_nodes)
        assert len(loaded.corner_vertices) == 4

    def test_round_trip_keeps_circle(self):
        mesh = make_disk_mesh((0.5, -0.5), 2.0, 1.0)
        loaded = read_mesh(write_mesh(mesh))
        assert loaded.circle is not None
        assert loaded.circle.radius == 2.0
        np.testing.assert_array_equal(loaded.circle.center, [0.5, -0.5])

    def test_header(self):
        text = write_mesh(make_interval(0.0, 1.0, 4))
        assert text.splitlines()[0] == "1 5 4"

    def test_malformed(self):
        with pytest.raises(MeshError):
            read_mesh("2 x 1\n0 0\n1 0\n")
