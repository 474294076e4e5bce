"""
Mesh construction, refinement and boundary geometry

Builds simplicial meshes of intervals, simple polygons and disks (as inscribed
regular polygons that remember their exact radius), refines them uniformly and
answers curvature queries on the smooth part of the boundary.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from scipy import sparse
from scipy.spatial import Delaunay
from shapely.geometry import Polygon

from .config import config
from .errors import CornerPointError, MeshError, MeshQualityError

logger = logging.getLogger(__name__)

CORNER_ANGLE_TOL = 1e-9
NORMAL_TOL = 1e-12
SMOOTHING_SWEEPS = 8
LATTICE_CLEARANCE = 0.55


@dataclass(frozen=True)
class Circle:
    """Exact circle recorded for disk meshes"""
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class BoundaryFacet:
    """One boundary facet with its outward unit normal"""
    facet_id: int
    nodes: Tuple[int, ...]
    normal: np.ndarray


@dataclass(frozen=True)
class BoundaryCurvature:
    """Curvature data at a smooth boundary point"""
    facet_id: int
    kappa: float
    matrix_B: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh with boundary classification"""
    dimension: int
    nodes: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)
    boundary_nodes: np.ndarray = field(repr=False)
    facet_nodes: np.ndarray = field(repr=False)
    facet_normals: np.ndarray = field(repr=False)
    mesh_size_h: float
    outline: np.ndarray = field(repr=False)
    circle: Optional[Circle] = None
    nested_parent: Optional["Mesh"] = field(default=None, repr=False)
    midpoint_parents: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def boundary_facets(self) -> List[BoundaryFacet]:
        return [
            BoundaryFacet(i, tuple(int(n) for n in nodes), normal)
            for i, (nodes, normal) in enumerate(zip(self.facet_nodes, self.facet_normals))
        ]

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def element_measures(self) -> np.ndarray:
        return _simplex_measures(self.nodes, self.elements)

    @cached_property
    def element_centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def measure(self) -> float:
        return float(self.element_measures.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique sorted node pairs (2D) or the elements themselves (1D)"""
        if self.dimension == 1:
            return np.sort(self.elements, axis=1)
        return _unique_edges(self.elements)[0]

    @cached_property
    def min_angle_degrees(self) -> float:
        if self.dimension == 1:
            return 180.0
        return float(np.degrees(_triangle_angles(self.nodes, self.elements).min()))

    @cached_property
    def euler_characteristic(self) -> int:
        if self.dimension == 1:
            return self.n_nodes - self.n_elements
        return self.n_nodes - self.edges.shape[0] + self.n_elements

    @cached_property
    def diameter(self) -> float:
        span = self.nodes.max(axis=0) - self.nodes.min(axis=0)
        return float(np.linalg.norm(span))

    @cached_property
    def corner_vertices(self) -> np.ndarray:
        """Coordinates of the irregular boundary set (polygon corners)"""
        if self.dimension == 1 or self.circle is not None:
            return np.zeros((0, self.dimension))
        return _corners_of_outline(self.outline)

    @cached_property
    def mesh_id(self) -> str:
        digest = hashlib.md5()
        digest.update(np.ascontiguousarray(self.nodes).tobytes())
        digest.update(np.ascontiguousarray(self.elements).tobytes())
        return digest.hexdigest()[:16]

    def summary(self) -> dict:
        return {
            "mesh_id": self.mesh_id,
            "dimension": self.dimension,
            "n_nodes": self.n_nodes,
            "n_elements": self.n_elements,
            "n_boundary_nodes": int(self.boundary_nodes.size),
            "mesh_size_h": self.mesh_size_h,
            "measure": self.measure,
            "disk_radius": self.circle.radius if self.circle else None,
        }


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def _simplex_measures(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    if elements.shape[1] == 2:
        return np.abs(nodes[elements[:, 1], 0] - nodes[elements[:, 0], 0])
    p0, p1, p2 = (nodes[elements[:, k]] for k in range(3))
    return 0.5 * _cross2(p1 - p0, p2 - p0)


def _cross2(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _triangle_angles(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosine = np.einsum("ij,ij->i", u, v) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        )
        angles.append(np.arccos(np.clip(cosine, -1.0, 1.0)))
    return np.column_stack(angles)


def _unique_edges(triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unique edges and, per triangle, the edge index of (01, 12, 20)"""
    local = np.stack(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=1
    )
    flat = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(flat, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def _max_edge_length(nodes: np.ndarray, elements: np.ndarray) -> float:
    if elements.shape[1] == 2:
        return float(_simplex_measures(nodes, elements).max())
    edges, _ = _unique_edges(elements)
    return float(np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1).max())


def _corners_of_outline(outline: np.ndarray) -> np.ndarray:
    corners = []
    count = len(outline)
    for i in range(count):
        before = outline[i] - outline[i - 1]
        after = outline[(i + 1) % count] - outline[i]
        turn = math.atan2(_cross2(before, after), float(np.dot(before, after)))
        if abs(turn) > CORNER_ANGLE_TOL:
            corners.append(outline[i])
    return np.array(corners).reshape(-1, 2)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def make_interval(a: float, b: float, n: int) -> Mesh:
    """Uniform mesh of [a, b] with n segments"""
    if not a < b:
        raise MeshError(f"interval endpoints must satisfy a < b, got a={a}, b={b}")
    if n < 2:
        raise MeshError(f"an interval mesh needs at least 2 elements, got {n}")

    nodes = np.linspace(a, b, n + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    mesh = Mesh(
        dimension=1,
        nodes=_frozen(nodes),
        elements=_frozen(elements),
        boundary_nodes=_frozen(np.array([0, n])),
        facet_nodes=_frozen(np.array([[0], [n]])),
        facet_normals=_frozen(np.array([[-1.0], [1.0]])),
        mesh_size_h=float((b - a) / n),
        outline=_frozen(np.array([[a], [b]], dtype=float)),
    )
    logger.debug(f"Interval mesh [{a}, {b}] with {n} elements")
    return mesh


def make_polygon_mesh(vertices: Sequence[Sequence[float]], target_h: float) -> Mesh:
    """Triangulate a simple counterclockwise polygon with max edge length <= target_h"""
    outline = _validated_outline(vertices)
    if target_h <= 0:
        raise MeshError(f"target_h must be positive, got {target_h}")
    return _mesh_outline(outline, target_h, circle=None)


def make_disk_mesh(center: Sequence[float], radius: float, target_h: float) -> Mesh:
    """Triangulate an inscribed regular polygon of a disk, recording the exact circle"""
    if radius <= 0:
        raise MeshError(f"disk radius must be positive, got {radius}")
    if target_h <= 0:
        raise MeshError(f"target_h must be positive, got {target_h}")

    circle = Circle(center=_frozen(np.asarray(center, dtype=float)), radius=float(radius))
    return _mesh_outline(_disk_outline(circle, target_h), target_h, circle=circle)


def _disk_outline(circle: Circle, spacing: float) -> np.ndarray:
    # Side length 2R sin(pi/n) <= spacing; an even n keeps both axis reflections
    ratio = min(spacing / (2.0 * circle.radius), 1.0)
    sides = max(8, math.ceil(math.pi / math.asin(ratio)))
    sides += sides % 2
    angles = 2.0 * math.pi * np.arange(sides) / sides
    return np.asarray(circle.center) + circle.radius * np.column_stack([np.cos(angles), np.sin(angles)])


def _validated_outline(vertices: Sequence[Sequence[float]]) -> np.ndarray:
    outline = np.asarray(vertices, dtype=float)
    if outline.ndim != 2 or outline.shape[1] != 2 or outline.shape[0] < 3:
        raise MeshError("a polygon needs at least 3 vertices in the plane")

    signed_area = 0.5 * float(np.sum(_cross2(outline, np.roll(outline, -1, axis=0))))
    scale = float(np.ptp(outline, axis=0).max()) or 1.0
    if abs(signed_area) <= 1e-12 * scale**2:
        raise MeshError("polygon vertices are collinear (zero area)")

    polygon = Polygon(outline)
    if not polygon.is_valid or not polygon.exterior.is_simple:
        raise MeshError("polygon is self-intersecting")

    if signed_area < 0:
        logger.warning("⚠️  Polygon given clockwise; reversing vertex order")
        outline = outline[::-1].copy()
    return outline


def _boundary_points(outline: np.ndarray, spacing: float) -> np.ndarray:
    points = []
    count = len(outline)
    for i in range(count):
        start, end = outline[i], outline[(i + 1) % count]
        pieces = max(1, math.ceil(np.linalg.norm(end - start) / spacing - 1e-9))
        t = np.arange(pieces) / pieces
        points.append(start + t[:, None] * (end - start))
    return np.vstack(points)


def _lattice_points(polygon: Polygon, spacing: float) -> np.ndarray:
    xmin, ymin, xmax, ymax = polygon.bounds
    cx, cy = polygon.centroid.x, polygon.centroid.y
    row_step = spacing * math.sqrt(3.0) / 2.0
    rows = np.arange(math.floor((ymin - cy) / row_step) - 1, math.ceil((ymax - cy) / row_step) + 2)
    cols = np.arange(math.floor((xmin - cx) / spacing) - 1, math.ceil((xmax - cx) / spacing) + 2)
    jj, ii = np.meshgrid(rows, cols, indexing="ij")
    xs = cx + (ii + 0.5 * (jj % 2)) * spacing
    ys = cy + jj * row_step
    candidates = np.column_stack([xs.ravel(), ys.ravel()])

    inside = shapely.contains_xy(polygon, candidates[:, 0], candidates[:, 1])
    candidates = candidates[inside]
    clearance = shapely.distance(shapely.points(candidates), polygon.exterior)
    return candidates[clearance >= LATTICE_CLEARANCE * spacing]


def _delaunay_inside(points: np.ndarray, polygon: Polygon, spacing: float) -> np.ndarray:
    triangles = Delaunay(points).simplices
    p = points[triangles]
    areas = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flipped = areas < 0
    triangles[flipped] = triangles[flipped][:, [0, 2, 1]]
    centroids = p.mean(axis=1)
    keep = shapely.contains_xy(polygon, centroids[:, 0], centroids[:, 1])
    keep &= np.abs(areas) > 1e-10 * spacing**2
    return triangles[keep]


def _smooth_interior(points: np.ndarray, triangles: np.ndarray, n_fixed: int,
                     polygon: Polygon) -> np.ndarray:
    """Laplacian smoothing of the free (lattice) nodes"""
    edges, _ = _unique_edges(triangles)
    n = points.shape[0]
    adjacency = sparse.coo_matrix(
        (np.ones(2 * len(edges)), (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
        shape=(n, n),
    ).tocsr()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    smoothed = points.copy()
    free = np.arange(n_fixed, n)
    free = free[degree[free] > 0]
    for _ in range(SMOOTHING_SWEEPS):
        averaged = adjacency @ smoothed / np.maximum(degree, 1)[:, None]
        candidate = averaged[free]
        inside = shapely.contains_xy(polygon, candidate[:, 0], candidate[:, 1])
        smoothed[free[inside]] = candidate[inside]
    return smoothed


def _mesh_outline(outline: np.ndarray, target_h: float, circle: Optional[Circle]) -> Mesh:
    polygon = Polygon(outline)
    spacing = target_h / 1.3
    reason = "no attempt made"

    for attempt in range(config.mesh_retries):
        if circle is not None:
            # every boundary node stays on the circle: one polygon vertex per boundary point
            outline = _disk_outline(circle, spacing)
            polygon = Polygon(outline)
            logger.debug(f"Disk of radius {circle.radius} approximated by a {len(outline)}-gon")
        boundary = _boundary_points(outline, spacing)
        interior = _lattice_points(polygon, spacing)
        points = np.vstack([boundary, interior])
        triangles = _delaunay_inside(points, polygon, spacing)
        points = _smooth_interior(points, triangles, boundary.shape[0], polygon)
        triangles = _delaunay_inside(points, polygon, spacing)

        try:
            mesh = _assemble_2d(points, triangles, boundary.shape[0], outline, circle, polygon.area)
        except MeshQualityError as exc:
            reason = str(exc)
        else:
            if mesh.mesh_size_h > target_h * (1 + 1e-12):
                reason = f"mesh size {mesh.mesh_size_h:.4g} exceeds target {target_h:.4g}"
            elif mesh.min_angle_degrees < config.min_angle_degrees:
                reason = f"minimum angle {mesh.min_angle_degrees:.2f} deg below bound"
            else:
                logger.info(
                    f"🔷 Triangulated polygon: {mesh.n_nodes} nodes, {mesh.n_elements} triangles, "
                    f"h={mesh.mesh_size_h:.4g}, min angle {mesh.min_angle_degrees:.1f} deg"
                )
                return mesh
        logger.debug(f"Mesh attempt {attempt + 1} rejected: {reason}")
        spacing *= 0.85

    raise MeshQualityError(
        f"could not triangulate polygon after {config.mesh_retries} attempts: {reason}"
    )


def _assemble_2d(points: np.ndarray, triangles: np.ndarray, n_boundary: int,
                 outline: np.ndarray, circle: Optional[Circle], area: float) -> Mesh:
    # Boundary points were generated in counterclockwise order
    facet_nodes = np.column_stack([np.arange(n_boundary), (np.arange(n_boundary) + 1) % n_boundary])

    edges, inverse = _unique_edges(triangles)
    counts = np.bincount(inverse.ravel(), minlength=len(edges))
    if counts.max(initial=0) > 2:
        raise MeshQualityError("non-manifold edge in triangulation")
    exposed = {tuple(e) for e in edges[counts == 1].tolist()}
    expected = {tuple(sorted(f)) for f in facet_nodes.tolist()}
    if exposed != expected:
        raise MeshQualityError("triangulation does not conform to the polygon boundary")

    covered = float(_simplex_measures(points, triangles).sum())
    if abs(covered - area) > 1e-12 * max(1.0, area):
        raise MeshQualityError(f"triangles cover {covered!r}, polygon area is {area!r}")

    used = np.zeros(points.shape[0], dtype=bool)
    used[triangles.ravel()] = True
    if not used.all():
        # drop orphaned lattice nodes and renumber
        renumber = -np.ones(points.shape[0], dtype=int)
        renumber[used] = np.arange(used.sum())
        points = points[used]
        triangles = renumber[triangles]

    tangents = points[facet_nodes[:, 1]] - points[facet_nodes[:, 0]]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]

    return Mesh(
        dimension=2,
        nodes=_frozen(points),
        elements=_frozen(triangles),
        boundary_nodes=_frozen(np.arange(n_boundary)),
        facet_nodes=_frozen(facet_nodes),
        facet_normals=_frozen(normals),
        mesh_size_h=_max_edge_length(points, triangles),
        outline=_frozen(outline),
        circle=circle,
    )


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

def refine(mesh: Mesh) -> Mesh:
    """Uniform nested refinement: segments split in 2, triangles in 4"""
    if mesh.dimension == 1:
        return _refine_1d(mesh)
    return _refine_2d(mesh)


def _refine_1d(mesh: Mesh) -> Mesh:
    n = mesh.n_nodes
    pairs = mesh.elements
    midpoints = mesh.nodes[pairs].mean(axis=1)
    new_ids = n + np.arange(len(pairs))
    elements = np.vstack([
        np.column_stack([pairs[:, 0], new_ids]),
        np.column_stack([new_ids, pairs[:, 1]]),
    ])
    return Mesh(
        dimension=1,
        nodes=_frozen(np.vstack([mesh.nodes, midpoints])),
        elements=_frozen(elements),
        boundary_nodes=mesh.boundary_nodes,
        facet_nodes=mesh.facet_nodes,
        facet_normals=mesh.facet_normals,
        mesh_size_h=mesh.mesh_size_h / 2.0,
        outline=mesh.outline,
        circle=mesh.circle,
        nested_parent=mesh,
        midpoint_parents=_frozen(pairs.copy()),
    )


def _refine_2d(mesh: Mesh) -> Mesh:
    n = mesh.n_nodes
    edges, tri_edges = _unique_edges(mesh.elements)
    midpoints = mesh.nodes[edges].mean(axis=1)
    mid = n + tri_edges  # (T, 3): midpoints of edges 01, 12, 20
    a, b, c = mesh.elements[:, 0], mesh.elements[:, 1], mesh.elements[:, 2]
    m01, m12, m20 = mid[:, 0], mid[:, 1], mid[:, 2]
    elements = np.vstack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])

    edge_index = {tuple(e): n + i for i, e in enumerate(edges.tolist())}
    facet_nodes, facet_normals = [], []
    for (i, j), normal in zip(mesh.facet_nodes.tolist(), mesh.facet_normals):
        m = edge_index[tuple(sorted((i, j)))]
        facet_nodes.extend([(i, m), (m, j)])
        facet_normals.extend([normal, normal])
    boundary = np.union1d(mesh.boundary_nodes, [m for _, m in facet_nodes[::2]])

    nodes = np.vstack([mesh.nodes, midpoints])
    return Mesh(
        dimension=2,
        nodes=_frozen(nodes),
        elements=_frozen(elements),
        boundary_nodes=_frozen(boundary),
        facet_nodes=_frozen(np.array(facet_nodes)),
        facet_normals=_frozen(np.array(facet_normals)),
        mesh_size_h=_max_edge_length(nodes, elements),
        outline=mesh.outline,
        circle=mesh.circle,
        nested_parent=mesh,
        midpoint_parents=_frozen(edges),
    )


def refinement_chain(mesh: Mesh, levels: int) -> List[Mesh]:
    """The mesh followed by `levels - 1` successive refinements"""
    chain = [mesh]
    for _ in range(levels - 1):
        chain.append(refine(chain[-1]))
    return chain


def prolongation(coarse: Mesh, fine: Mesh) -> sparse.csr_matrix:
    """P1 interpolation matrix from a coarse mesh to one of its refinements"""
    steps = []
    current = fine
    while current is not coarse:
        if current.nested_parent is None:
            raise MeshError("fine mesh is not a refinement of the coarse mesh")
        parent = current.nested_parent
        n_parent = parent.n_nodes
        n_new = current.n_nodes - n_parent
        rows = np.r_[np.arange(n_parent), np.repeat(n_parent + np.arange(n_new), 2)]
        cols = np.r_[np.arange(n_parent), current.midpoint_parents.ravel()]
        vals = np.r_[np.ones(n_parent), np.full(2 * n_new, 0.5)]
        steps.append(sparse.csr_matrix((vals, (rows, cols)), shape=(current.n_nodes, n_parent)))
        current = parent

    operator = sparse.identity(fine.n_nodes, format="csr")
    for step in steps:
        operator = operator @ step
    return operator.tocsr()


# ---------------------------------------------------------------------------
# Boundary curvature
# ---------------------------------------------------------------------------

def curvature_at(mesh: Mesh, point: Sequence[float]) -> BoundaryCurvature:
    """Principal curvature and the matrix B = K + (tr K) nu nu^T at a boundary point"""
    if mesh.dimension != 2:
        raise MeshError("curvature queries need a 2D mesh")
    point = np.asarray(point, dtype=float)
    scale = mesh.diameter
    facet_id = _locate_facet(mesh, point, tol=1e-10 * scale)

    if mesh.circle is not None:
        offset = point - mesh.circle.center
        distance = float(np.linalg.norm(offset))
        if distance == 0.0:
            raise MeshError("the disk center is not a boundary point")
        kappa = 1.0 / mesh.circle.radius
        normal = offset / distance
    else:
        for corner in mesh.corner_vertices:
            if np.linalg.norm(point - corner) <= 1e-10 * scale:
                raise CornerPointError(f"point {point.tolist()} is a boundary corner")
        kappa = 0.0
        normal = np.array(mesh.facet_normals[facet_id], dtype=float)

    tangent = np.array([-normal[1], normal[0]])
    curvature_k = kappa * np.outer(tangent, tangent)
    matrix_b = curvature_k + np.trace(curvature_k) * np.outer(normal, normal)
    return BoundaryCurvature(
        facet_id=facet_id, kappa=kappa, matrix_B=matrix_b, normal=normal, tangent=tangent
    )


def _locate_facet(mesh: Mesh, point: np.ndarray, tol: float) -> int:
    start = mesh.nodes[mesh.facet_nodes[:, 0]]
    end = mesh.nodes[mesh.facet_nodes[:, 1]]
    direction = end - start
    length_sq = np.einsum("ij,ij->i", direction, direction)
    t = np.clip(np.einsum("ij,ij->i", point - start, direction) / length_sq, 0.0, 1.0)
    distance = np.linalg.norm(start + t[:, None] * direction - point, axis=1)

    if mesh.circle is not None:
        radial = abs(np.linalg.norm(point - mesh.circle.center) - mesh.circle.radius)
        if radial <= tol:
            return int(np.argmin(distance))
    best = int(np.argmin(distance))
    if distance[best] > tol:
        raise MeshError(f"point {point.tolist()} does not lie on the boundary")
    return best


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def write_mesh(mesh: Mesh, path: Union[str, Path, None] = None) -> str:
    """Serialize as `DIM N_NODES N_ELEMS`, nodes, elements, boundary facets"""
    lines = [f"{mesh.dimension} {mesh.n_nodes} {mesh.n_elements}"]
    lines += [" ".join(repr(float(x)) for x in node) for node in mesh.nodes]
    lines += [" ".join(str(int(i)) for i in element) for element in mesh.elements]
    for nodes, normal in zip(mesh.facet_nodes, mesh.facet_normals):
        lines.append(" ".join([*(str(int(i)) for i in nodes), *(repr(float(x)) for x in normal)]))
    if mesh.circle is not None:
        center = " ".join(repr(float(x)) for x in mesh.circle.center)
        lines.append(f"# circle {center} {mesh.circle.radius!r}")
    if mesh.dimension == 2:
        lines.append("# outline " + " ".join(repr(float(x)) for x in mesh.outline.ravel()))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_mesh(source: Union[str, Path]) -> Mesh:
    """Parse the text format written by `write_mesh` (path or raw text)"""
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")

    rows = [line.split() for line in text.splitlines() if line.strip()]
    data = [r for r in rows if r[0] != "#"]
    meta = [r[1:] for r in rows if r[0] == "#"]
    try:
        dim, n_nodes, n_elems = (int(v) for v in data[0])
        nodes = np.array(data[1:1 + n_nodes], dtype=float)
        elements = np.array(data[1 + n_nodes:1 + n_nodes + n_elems], dtype=int)
        facets = data[1 + n_nodes + n_elems:]
        facet_nodes = np.array([f[:dim] for f in facets], dtype=int)
        facet_normals = np.array([f[dim:] for f in facets], dtype=float)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh text: {exc}") from exc

    circle = None
    outline = np.array([[nodes[:, 0].min()], [nodes[:, 0].max()]])
    for entry in meta:
        if entry[0] == "circle":
            values = [float(v) for v in entry[1:]]
            circle = Circle(center=_frozen(np.array(values[:-1])), radius=values[-1])
        elif entry[0] == "outline":
            outline = np.array([float(v) for v in entry[1:]]).reshape(-1, 2)

    return Mesh(
        dimension=dim,
        nodes=_frozen(nodes.reshape(n_nodes, dim)),
        elements=_frozen(elements),
        boundary_nodes=_frozen(np.unique(facet_nodes)),
        facet_nodes=_frozen(facet_nodes),
        facet_normals=_frozen(facet_normals),
        mesh_size_h=_max_edge_length(nodes.reshape(n_nodes, dim), elements),
        outline=_frozen(outline),
        circle=circle,
    )


def rectangle_vertices(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    """Counterclockwise corners of an axis-aligned rectangle"""
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
