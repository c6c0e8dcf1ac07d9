"""
Conforming triangle meshes and the fracture (skeleton) sub-mesh.

Conventions used throughout the package:

* cells are counter-clockwise vertex triples;
* facet ``i`` of a cell is the edge opposite its vertex ``i``;
* ``facet_cells[f] = (c0, c1)`` with ``c0 < c1``, ``c1 = -1`` on the boundary;
* the global facet normal points out of ``c0`` (so from the lower to the
  higher cell index, and outwards on the boundary).
"""

from __future__ import annotations

import dataclasses
import enum
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import (
    DegenerateCut,
    InvalidMesh,
    NotFitted,
    OverlappingFractures,
)
from .geometry import (
    TOL_GEO_RELATIVE,
    BoundaryKind,
    DomainBoundary,
    Fracture,
    FractureNetwork,
    IntersectionSets,
    PointClass,
    point_segment_distance,
)

logger = logging.getLogger(__name__)

# Level-set perturbation magnitude relative to the mesh diameter.
PERTURBATION_RELATIVE = 1e-12
# Sub-cells below this fraction of the domain area are rejected.
AREA_TOL_RELATIVE = 1e-14

_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class BoundaryTag(enum.IntEnum):
    """Boundary condition type of a facet."""

    NONE = 0
    DIRICHLET = 1
    NEUMANN = 2


def _permeability_array(value: Any, n_cells: int) -> np.ndarray:
    """Broadcast a scalar, a 2x2 tensor or per-cell values to shape (n, 2, 2)."""
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        return np.broadcast_to(array * np.eye(2), (n_cells, 2, 2)).copy()
    if array.shape == (2, 2):
        return np.broadcast_to(array, (n_cells, 2, 2)).copy()
    if array.shape == (n_cells,):
        return array[:, None, None] * np.eye(2)[None]
    if array.shape == (n_cells, 2, 2):
        return array.copy()
    raise InvalidMesh(f"cannot use permeability of shape {array.shape}")


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Conforming triangulation with facet tags and cell permeabilities."""

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    cell_facets: np.ndarray
    facet_cells: np.ndarray
    boundary_tags: np.ndarray
    boundary_markers: np.ndarray
    fracture_tags: np.ndarray
    permeability: np.ndarray

    @classmethod
    def from_cells(
        cls,
        vertices: Any,
        cells: Any,
        *,
        permeability: Any = 1.0,
        boundary: Optional[DomainBoundary] = None,
    ) -> "SimplicialMesh":
        """Build the facet structure of a triangulation.

        Clockwise cells are reoriented in place; the cell order is kept.
        """
        vertices = np.asarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise InvalidMesh("vertices must have shape (n, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3 or len(cells) == 0:
            raise InvalidMesh("cells must have shape (n, 3) with n > 0")
        if cells.min() < 0 or cells.max() >= len(vertices):
            raise InvalidMesh("cell references a missing vertex")

        signed = _signed_areas(vertices, cells)
        flip = signed < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]

        n_cells = len(cells)
        keys = np.sort(cells[:, _LOCAL_EDGES], axis=2).reshape(-1, 2)
        facets, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        n_facets = len(facets)
        cell_facets = inverse.reshape(n_cells, 3)

        counts = np.bincount(inverse, minlength=n_facets)
        if counts.max() > 2:
            raise InvalidMesh("a facet is shared by more than two cells")
        order = np.argsort(inverse, kind="stable")
        owner = order // 3
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        facet_cells = np.full((n_facets, 2), -1, dtype=np.int64)
        facet_cells[:, 0] = owner[starts]
        shared = counts == 2
        facet_cells[shared, 1] = owner[starts[shared] + 1]

        mesh = cls(
            vertices=vertices,
            cells=cells,
            facets=facets.astype(np.int64),
            cell_facets=cell_facets.astype(np.int64),
            facet_cells=facet_cells,
            boundary_tags=np.zeros(n_facets, dtype=np.int8),
            boundary_markers=np.full(n_facets, -1, dtype=np.int64),
            fracture_tags=np.full(n_facets, -1, dtype=np.int64),
            permeability=_permeability_array(permeability, n_cells),
        )
        if boundary is not None:
            mesh = mesh.with_boundary(boundary)
        return mesh

    # Sizes

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    # Geometry

    @cached_property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.cells)

    @cached_property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.linalg.norm(d, axis=1)

    @cached_property
    def facet_midpoints(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Unit normals in the global orientation (out of ``facet_cells[:, 0]``)."""
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.facet_lengths[:, None]
        outward = self.facet_midpoints - self.centroids[self.facet_cells[:, 0]]
        flip = (normals * outward).sum(axis=1) < 0
        normals[flip] *= -1.0
        return normals

    @cached_property
    def facet_signs(self) -> np.ndarray:
        """+1 where the global facet normal is outward for the cell, shape (nc, 3)."""
        first = self.facet_cells[self.cell_facets, 0]
        cell_ids = np.arange(self.n_cells)[:, None]
        return np.where(first == cell_ids, 1.0, -1.0)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @cached_property
    def diameter(self) -> float:
        """Diagonal of the bounding box."""
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))

    @property
    def tol_geo(self) -> float:
        """Geometric tolerance, relative to the mesh diameter."""
        return TOL_GEO_RELATIVE * self.diameter

    @cached_property
    def cell_sizes(self) -> np.ndarray:
        """Longest edge per cell."""
        return self.facet_lengths[self.cell_facets].max(axis=1)

    # Lookup

    @cached_property
    def _facet_codes(self) -> np.ndarray:
        """Sorted scalar key per facet for vertex-pair lookup."""
        return self.facets[:, 0] * self.n_vertices + self.facets[:, 1]

    def facet_index(self, pairs: Any) -> np.ndarray:
        """Facet id of each vertex pair (any order), -1 when not an edge."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        codes = pairs[:, 0] * self.n_vertices + pairs[:, 1]
        pos = np.searchsorted(self._facet_codes, codes)
        pos = np.clip(pos, 0, self.n_facets - 1)
        return np.where(self._facet_codes[pos] == codes, pos, -1)

    @cached_property
    def _inverse_maps(self) -> np.ndarray:
        """Inverse Jacobians of the affine maps from the reference triangle."""
        v = self.vertices[self.cells]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        return np.linalg.inv(jac)

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        """KD-tree over cell centroids for point location."""
        return cKDTree(self.centroids)

    def barycentric(self, points: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points[...]`` in ``cells[...]``."""
        origin = self.vertices[self.cells[cells, 0]]
        local = np.einsum("...ij,...j->...i", self._inverse_maps[cells], points - origin)
        return np.concatenate([1.0 - local.sum(axis=-1, keepdims=True), local], axis=-1)

    def locate(
        self,
        points: Any,
        prefer: Optional[Sequence[float]] = None,
        tol: float = 1e-10,
    ) -> np.ndarray:
        """Cell containing each point, -1 for points outside the mesh.

        Points on shared edges go to the containing cell whose centroid is
        closest to ``prefer`` (or to the point itself).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        result = np.full(len(points), -1, dtype=np.int64)
        if len(points) == 0:
            return result
        k = min(12, self.n_cells)
        _, candidates = self._centroid_tree.query(points, k=k)
        candidates = np.asarray(candidates).reshape(len(points), k)
        result, missing = self._pick(points, candidates, prefer, tol)
        if missing.any():
            pending = np.flatnonzero(missing)
            for start in range(0, len(pending), 8):
                ids = pending[start : start + 8]
                every = np.broadcast_to(np.arange(self.n_cells), (len(ids), self.n_cells))
                picked, _ = self._pick(points[ids], every, prefer, tol)
                result[ids] = picked
        return result

    def _pick(
        self,
        points: np.ndarray,
        candidates: np.ndarray,
        prefer: Optional[Sequence[float]],
        tol: float,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Candidate cell containing each point whose centroid is nearest ``prefer`` (or the point)."""
        lam = self.barycentric(points[:, None, :], candidates)
        inside = lam.min(axis=2) >= -tol
        anchor = points if prefer is None else np.broadcast_to(np.asarray(prefer, float), points.shape)
        dist = np.linalg.norm(self.centroids[candidates] - anchor[:, None, :], axis=2)
        dist = np.where(inside, dist, np.inf)
        best = dist.argmin(axis=1)
        found = inside.any(axis=1)
        picked = np.where(found, candidates[np.arange(len(points)), best], -1)
        return picked, ~found

    # Derived meshes

    def with_permeability(self, permeability: Any) -> "SimplicialMesh":
        """Copy with new cell permeabilities."""
        return dataclasses.replace(
            self, permeability=_permeability_array(permeability, self.n_cells)
        )

    def with_tags(
        self,
        boundary_tags: Optional[np.ndarray] = None,
        boundary_markers: Optional[np.ndarray] = None,
        fracture_tags: Optional[np.ndarray] = None,
    ) -> "SimplicialMesh":
        """Copy with the given tag arrays replaced."""
        return dataclasses.replace(
            self,
            boundary_tags=self.boundary_tags if boundary_tags is None else boundary_tags,
            boundary_markers=(
                self.boundary_markers if boundary_markers is None else boundary_markers
            ),
            fracture_tags=self.fracture_tags if fracture_tags is None else fracture_tags,
        )

    def with_boundary(self, boundary: DomainBoundary) -> "SimplicialMesh":
        """Tag boundary facets from the polygon edge they lie on."""
        facets = self.boundary_facets
        tol = max(boundary.tol_geo, self.tol_geo)
        markers = boundary.locate(self.facet_midpoints[facets], tol)
        if np.any(markers < 0):
            first = self.facet_midpoints[facets[markers < 0][0]]
            raise InvalidMesh(f"boundary facet at {tuple(first)} is not on the domain boundary")
        kinds = np.array(
            [BoundaryTag.DIRICHLET if t is BoundaryKind.DIRICHLET else BoundaryTag.NEUMANN for t in boundary.tags],
            dtype=np.int8,
        )
        boundary_tags = np.zeros(self.n_facets, dtype=np.int8)
        boundary_markers = np.full(self.n_facets, -1, dtype=np.int64)
        boundary_tags[facets] = kinds[markers]
        boundary_markers[facets] = markers
        return self.with_tags(boundary_tags, boundary_markers)

    def boundary_polygon(self) -> DomainBoundary:
        """The boundary loop as a polygon, one edge per boundary facet."""
        facets = self.boundary_facets
        owner = self.facet_cells[facets, 0]
        local = np.argmax(self.cell_facets[owner] == facets[:, None], axis=1)
        start = self.cells[owner, (local + 1) % 3]
        end = self.cells[owner, (local + 2) % 3]
        following = {int(s): (int(e), int(f)) for s, e, f in zip(start, end, facets)}
        if len(following) != len(facets):
            raise InvalidMesh("boundary is not a simple loop")
        loop: List[int] = []
        tags: List[str] = []
        names: List[str] = []
        current = int(start[0])
        for _ in range(len(facets)):
            nxt, facet = following[current]
            loop.append(current)
            tags.append("D" if self.boundary_tags[facet] == BoundaryTag.DIRICHLET else "N")
            names.append(str(facet))
            current = nxt
            if current == int(start[0]):
                break
        if len(loop) != len(facets):
            raise InvalidMesh("boundary consists of more than one loop")
        return DomainBoundary(self.vertices[loop], tuple(tags), tuple(names))

    # Checks

    def validate(self, tol: Optional[float] = None) -> None:
        """Raise ``InvalidMesh`` when an invariant does not hold."""
        tol = self.tol_geo if tol is None else tol
        if np.any(self.areas <= AREA_TOL_RELATIVE * self.total_area):
            raise InvalidMesh(f"{int((self.areas <= 0).sum())} degenerate cells")
        pairs = cKDTree(self.vertices).query_pairs(tol)
        if pairs:
            raise InvalidMesh(f"{len(pairs)} pairs of duplicate vertices")
        interior = self.facet_cells[:, 1] >= 0
        if np.any(self.boundary_tags[interior] != BoundaryTag.NONE):
            raise InvalidMesh("interior facet carries a boundary tag")
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.cells.ravel()] = True
        if not used.all():
            raise InvalidMesh(f"{int((~used).sum())} vertices belong to no cell")
        eigen = np.linalg.eigvalsh(0.5 * (self.permeability + self.permeability.transpose(0, 2, 1)))
        if np.any(eigen[:, 0] <= 0):
            raise InvalidMesh("permeability is not positive definite")


def _signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Signed cell areas, positive for counterclockwise cells."""
    v = vertices[cells]
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def rectangle_mesh(
    xs: Any,
    ys: Any,
    *,
    boundary: Optional[DomainBoundary] = None,
    permeability: Any = 1.0,
    mapping: Any = None,
) -> SimplicialMesh:
    """Tensor-grid triangulation, each rectangle cut along its rising diagonal.

    ``mapping`` optionally transforms the grid vertices, in which case a
    matching ``boundary`` must be given.
    """
    xs = np.unique(np.asarray(xs, dtype=float))
    ys = np.unique(np.asarray(ys, dtype=float))
    nx, ny = len(xs) - 1, len(ys) - 1
    if nx < 1 or ny < 1:
        raise InvalidMesh("need at least two grid lines in each direction")
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if mapping is not None:
        vertices = np.asarray(mapping(vertices), dtype=float)
    index = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = index[:-1, :-1].ravel()
    v10 = index[:-1, 1:].ravel()
    v01 = index[1:, :-1].ravel()
    v11 = index[1:, 1:].ravel()
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    if boundary is None:
        boundary = DomainBoundary.rectangle(xs[0], ys[0], xs[-1], ys[-1])
    return SimplicialMesh.from_cells(
        vertices, cells, permeability=permeability, boundary=boundary
    )


def _inherit_tags(
    old: SimplicialMesh,
    new: SimplicialMesh,
    split_parent: Dict[int, int],
) -> SimplicialMesh:
    """Copy facet tags from ``old`` to ``new``.

    Facets present in both meshes keep their tags; the two halves of a split
    facet (keyed by the inserted vertex in ``split_parent``) inherit the tags
    of the facet they came from.
    """
    nv_old = old.n_vertices
    u, v = new.facets[:, 0], new.facets[:, 1]
    source = np.full(new.n_facets, -1, dtype=np.int64)
    both_old = (u < nv_old) & (v < nv_old)
    if both_old.any():
        source[both_old] = old.facet_index(new.facets[both_old])
    if split_parent:
        parent_of = np.full(new.n_vertices, -1, dtype=np.int64)
        for vertex, facet in split_parent.items():
            parent_of[vertex] = facet
        for mid, other in ((u, v), (v, u)):
            parent = parent_of[mid]
            has = (parent >= 0) & (other < nv_old)
            if not has.any():
                continue
            ends = old.facets[parent[has]]
            on_parent = (ends == other[has, None]).any(axis=1)
            rows = np.flatnonzero(has)[on_parent]
            source[rows] = parent[has][on_parent]
    mask = source >= 0
    boundary_tags = np.zeros(new.n_facets, dtype=np.int8)
    boundary_markers = np.full(new.n_facets, -1, dtype=np.int64)
    fracture_tags = np.full(new.n_facets, -1, dtype=np.int64)
    boundary_tags[mask] = old.boundary_tags[source[mask]]
    boundary_markers[mask] = old.boundary_markers[source[mask]]
    fracture_tags[mask] = old.fracture_tags[source[mask]]
    return new.with_tags(boundary_tags, boundary_markers, fracture_tags)


def refine_uniform(mesh: SimplicialMesh) -> SimplicialMesh:
    """Red refinement: every triangle into four; children of cell k are 4k..4k+3."""
    nv = mesh.n_vertices
    vertices = np.concatenate([mesh.vertices, mesh.facet_midpoints])
    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (nv + mesh.cell_facets).T
    children = np.stack(
        [
            np.stack([v0, m2, m1], axis=1),
            np.stack([m2, v1, m0], axis=1),
            np.stack([m1, m0, v2], axis=1),
            np.stack([m0, m1, m2], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    refined = SimplicialMesh.from_cells(
        vertices, children, permeability=np.repeat(mesh.permeability, 4, axis=0)
    )
    split_parent = {nv + f: f for f in range(mesh.n_facets)}
    return _inherit_tags(mesh, refined, split_parent)


def insert_vertices(
    mesh: SimplicialMesh, points: Any, tol: Optional[float] = None
) -> SimplicialMesh:
    """Insert points as mesh vertices, splitting the cell or edge that holds them.

    Points that already coincide with a vertex, or lie outside the mesh, are
    skipped.
    """
    tol = mesh.tol_geo if tol is None else tol
    for point in np.atleast_2d(np.asarray(points, dtype=float)):
        cell = int(mesh.locate(point[None], tol=1e-9)[0])
        if cell < 0:
            logger.debug("point %s is outside the mesh, not inserted", tuple(point))
            continue
        corners = mesh.vertices[mesh.cells[cell]]
        if np.linalg.norm(corners - point, axis=1).min() <= tol:
            continue
        lam = mesh.barycentric(point[None], np.array([cell]))[0]
        heights = 2.0 * mesh.areas[cell] / mesh.facet_lengths[mesh.cell_facets[cell]]
        on_edge = np.flatnonzero(np.abs(lam) * heights <= tol)
        new_id = mesh.n_vertices
        vertices = np.concatenate([mesh.vertices, point[None]])
        cells = mesh.cells.copy()
        extra: List[List[int]] = []
        parents: List[int] = []
        split_parent: Dict[int, int] = {}
        if len(on_edge):
            facet = int(mesh.cell_facets[cell, on_edge[0]])
            for owner in mesh.facet_cells[facet]:
                if owner < 0:
                    continue
                i = int(np.flatnonzero(mesh.cell_facets[owner] == facet)[0])
                o, a, b = (int(mesh.cells[owner, (i + k) % 3]) for k in range(3))
                cells[owner] = (o, a, new_id)
                extra.append([o, new_id, b])
                parents.append(int(owner))
            split_parent[new_id] = facet
        else:
            v0, v1, v2 = (int(v) for v in mesh.cells[cell])
            cells[cell] = (v0, v1, new_id)
            extra.extend([[v1, v2, new_id], [v2, v0, new_id]])
            parents.extend([cell, cell])
        cells = np.concatenate([cells, np.array(extra, dtype=np.int64)])
        permeability = np.concatenate([mesh.permeability, mesh.permeability[parents]])
        rebuilt = SimplicialMesh.from_cells(vertices, cells, permeability=permeability)
        mesh = _inherit_tags(mesh, rebuilt, split_parent)
    return mesh


@dataclass(frozen=True, eq=False)
class LevelSetField:
    """Perturbed signed distance of the mesh vertices to a fracture line.

    ``distance`` holds the exact values; in ``values`` every entry with
    ``|distance| < magnitude`` is replaced by ``+magnitude``, so no value
    is zero.
    """

    values: np.ndarray
    distance: np.ndarray
    magnitude: float

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.values).astype(int)

    @property
    def perturbed(self) -> np.ndarray:
        """Vertices whose level set value was moved off zero."""
        return np.abs(self.distance) < self.magnitude


def level_set(mesh: SimplicialMesh, fracture: Fracture) -> LevelSetField:
    """Level set of the fracture line on the mesh vertices."""
    magnitude = PERTURBATION_RELATIVE * mesh.diameter
    distance = (mesh.vertices - fracture.a) @ fracture.normal
    values = np.where(np.abs(distance) < magnitude, magnitude, distance)
    return LevelSetField(values=values, distance=distance, magnitude=magnitude)


def _vertices_on_segment(
    mesh: SimplicialMesh, fracture: Fracture, field: LevelSetField, tol: float
) -> np.ndarray:
    """Vertices the fracture passes through, within ``tol`` or the perturbation."""
    t = fracture.parameter(mesh.vertices)
    slack = tol / fracture.length
    within = (t >= -slack) & (t <= 1.0 + slack)
    return within & (np.abs(field.distance) <= max(tol, field.magnitude))


def immerse_fracture(
    mesh: SimplicialMesh,
    fracture: Fracture,
    tol_geo: Optional[float] = None,
    fracture_id: Optional[int] = None,
) -> SimplicialMesh:
    """Cut the mesh along a fracture so that the fracture becomes a facet chain.

    The fracture endpoints are inserted as vertices first. Edges whose
    perturbed level set changes sign get a cut vertex, except edges ending
    in a vertex the fracture already passes through. New facets lying on the
    fracture are tagged with ``fracture_id`` (no tagging when it is
    ``None``).
    """
    tol = mesh.tol_geo if tol_geo is None else tol_geo
    mesh = insert_vertices(mesh, np.stack([fracture.a, fracture.b]), tol)
    field = level_set(mesh, fracture)
    phi, signs = field.values, field.signs
    on_segment = _vertices_on_segment(mesh, fracture, field, tol)
    nv = mesh.n_vertices

    fa, fb = mesh.facets[:, 0], mesh.facets[:, 1]
    crossing = (signs[fa] * signs[fb] < 0) & ~on_segment[fa] & ~on_segment[fb]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(crossing, phi[fa] / (phi[fa] - phi[fb]), 0.0)
    cut_points = mesh.vertices[fa] + s[:, None] * (mesh.vertices[fb] - mesh.vertices[fa])
    t = fracture.parameter(cut_points)
    slack = tol / fracture.length
    crossing &= (t >= -slack) & (t <= 1.0 + slack)
    cut_facets = np.flatnonzero(crossing)
    cut_vertex = np.full(mesh.n_facets, -1, dtype=np.int64)
    cut_vertex[cut_facets] = nv + np.arange(len(cut_facets))
    vertices = np.concatenate([mesh.vertices, cut_points[cut_facets]])

    cells = mesh.cells.copy()
    extra: List[Tuple[int, int, int]] = []
    parents: List[int] = []
    on_line: List[Tuple[int, int]] = []
    cell_cut = crossing[mesh.cell_facets]
    cell_zero = on_segment[mesh.cells]
    affected = np.flatnonzero(cell_cut.any(axis=1) | (cell_zero.sum(axis=1) >= 2))
    for k in affected:
        verts = [int(v) for v in mesh.cells[k]]
        cuts = np.flatnonzero(cell_cut[k])
        zeros = np.flatnonzero(cell_zero[k])
        if len(cuts) == 0:
            if len(zeros) == 3:
                raise DegenerateCut(f"cell {k} lies on fracture {fracture_id}")
            on_line.append((verts[zeros[0]], verts[zeros[1]]))
            continue
        if len(cuts) == 1:
            i = int(cuts[0])
            if not cell_zero[k, i]:
                raise DegenerateCut(f"inconsistent level-set cut in cell {k}")
            o, a, b = verts[i], verts[(i + 1) % 3], verts[(i + 2) % 3]
            p = int(cut_vertex[mesh.cell_facets[k, i]])
            cells[k] = (o, a, p)
            extra.append((o, p, b))
            parents.append(int(k))
            on_line.append((o, p))
            continue
        if len(cuts) == 2:
            lone = 3 - int(cuts.sum())
            a, b, c = verts[lone], verts[(lone + 1) % 3], verts[(lone + 2) % 3]
            p_ab = int(cut_vertex[mesh.cell_facets[k, (lone + 2) % 3]])
            p_ca = int(cut_vertex[mesh.cell_facets[k, (lone + 1) % 3]])
            cells[k] = (a, p_ab, p_ca)
            if np.linalg.norm(vertices[p_ab] - vertices[c]) <= np.linalg.norm(
                vertices[b] - vertices[p_ca]
            ):
                extra.extend([(p_ab, b, c), (p_ab, c, p_ca)])
            else:
                extra.extend([(p_ab, b, p_ca), (b, c, p_ca)])
            parents.extend([int(k), int(k)])
            on_line.append((p_ab, p_ca))
            continue
        raise DegenerateCut(f"cell {k} is cut through all three edges")

    if extra:
        cells = np.concatenate([cells, np.array(extra, dtype=np.int64)])
    permeability = np.concatenate(
        [mesh.permeability, mesh.permeability[np.array(parents, dtype=np.int64)]]
    )
    areas = _signed_areas(vertices, cells)
    if np.any(np.abs(areas) <= AREA_TOL_RELATIVE * mesh.total_area):
        bad = int(np.argmin(np.abs(areas)))
        raise DegenerateCut(
            f"cutting along fracture {fracture_id} produced a sliver near "
            f"{tuple(vertices[cells[bad]].mean(axis=0))}"
        )
    rebuilt = SimplicialMesh.from_cells(vertices, cells, permeability=permeability)
    split_parent = {int(cut_vertex[f]): int(f) for f in cut_facets}
    result = _inherit_tags(mesh, rebuilt, split_parent)
    if fracture_id is not None and on_line:
        ids = result.facet_index(np.array(on_line))
        tags = result.fracture_tags.copy()
        clash = (tags[ids] >= 0) & (tags[ids] != fracture_id)
        if clash.any():
            raise OverlappingFractures(int(tags[ids][clash][0]), fracture_id)
        tags[ids] = fracture_id
        result = result.with_tags(fracture_tags=tags)
    logger.debug(
        "immersed fracture %s: %d edges cut, %d cells split, %d -> %d cells",
        fracture_id,
        len(cut_facets),
        len(parents),
        mesh.n_cells,
        result.n_cells,
    )
    return result


def immerse_network(
    mesh: SimplicialMesh,
    network: FractureNetwork,
    include_blocking: bool = False,
) -> SimplicialMesh:
    """Immerse every conductive (optionally blocking) fracture, then insert CB points."""
    for index, fracture in enumerate(network):
        if fracture.is_conductive:
            mesh = immerse_fracture(mesh, fracture, network.tol, fracture_id=index)
        elif include_blocking:
            mesh = immerse_fracture(mesh, fracture, network.tol, fracture_id=None)
    if len(network.intersections.cb):
        mesh = insert_vertices(mesh, network.intersections.cb, network.tol)
    logger.info(
        "immersed %d fractures: %d cells, %d facets",
        len(network),
        mesh.n_cells,
        mesh.n_facets,
    )
    return mesh


def _facets_on(mesh: SimplicialMesh, fracture: Fracture, tol: float) -> np.ndarray:
    """Facets with both endpoints within ``tol`` of the fracture."""
    ends = mesh.vertices[mesh.facets]
    d0, _ = point_segment_distance(ends[:, 0], fracture.a, fracture.b)
    d1, _ = point_segment_distance(ends[:, 1], fracture.a, fracture.b)
    return (d0 <= tol) & (d1 <= tol)


def _coverage_gap(
    mesh: SimplicialMesh, fracture: Fracture, facets: np.ndarray, tol: float
) -> Optional[np.ndarray]:
    """First point of the fracture not covered by ``facets``, or ``None``."""
    slack = tol / fracture.length
    if len(facets) == 0:
        return fracture.a
    t = fracture.parameter(mesh.vertices[mesh.facets[facets]].reshape(-1, 2)).reshape(-1, 2)
    t.sort(axis=1)
    t = t[np.argsort(t[:, 0])]
    reach = 0.0
    for lo, hi in t:
        if lo > reach + slack:
            return fracture.point_at(reach)
        reach = max(reach, hi)
    if reach < 1.0 - slack:
        return fracture.point_at(reach)
    return None


def check_conforming(
    mesh: SimplicialMesh, fracture: Fracture, tol: Optional[float] = None
) -> bool:
    """Whether the fracture is a union of mesh facets."""
    tol = mesh.tol_geo if tol is None else tol
    facets = np.flatnonzero(_facets_on(mesh, fracture, tol))
    return _coverage_gap(mesh, fracture, facets, tol) is None


def tag_fracture_facets(
    mesh: SimplicialMesh, network: FractureNetwork
) -> SimplicialMesh:
    """Tag facets lying on conductive fractures of an already fitted mesh."""
    tags = np.full(mesh.n_facets, -1, dtype=np.int64)
    for index in network.conductive:
        on = _facets_on(mesh, network[index], network.tol)
        clash = on & (tags >= 0)
        if clash.any():
            raise OverlappingFractures(int(tags[clash][0]), index)
        tags[on] = index
    return mesh.with_tags(fracture_tags=tags)


@dataclass(frozen=True, eq=False)
class FractureMesh:
    """1D sub-mesh of fracture-tagged facets.

    Segment vertices are ordered along the fracture tangent. ``vertices``
    holds the parent mesh vertex ids of the skeleton vertices, and
    ``segment_vertices`` indexes into it.
    """

    facets: np.ndarray
    fracture_ids: np.ndarray
    segments: np.ndarray
    vertices: np.ndarray
    segment_vertices: np.ndarray
    vertex_classes: np.ndarray
    points: np.ndarray
    thickness: np.ndarray
    conductivity: np.ndarray

    @classmethod
    def empty(cls) -> "FractureMesh":
        """Fracture mesh without segments, for networks with no conductive fracture."""
        ints = np.zeros(0, dtype=np.int64)
        pairs = np.zeros((0, 2), dtype=np.int64)
        return cls(
            facets=ints,
            fracture_ids=ints,
            segments=pairs,
            vertices=ints,
            segment_vertices=pairs,
            vertex_classes=ints,
            points=np.zeros((0, 2)),
            thickness=np.zeros(0),
            conductivity=np.zeros(0),
        )

    @property
    def n_segments(self) -> int:
        return len(self.facets)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def lengths(self) -> np.ndarray:
        d = self.points[self.segment_vertices[:, 1]] - self.points[self.segment_vertices[:, 0]]
        return np.linalg.norm(d, axis=1)

    @cached_property
    def tangents(self) -> np.ndarray:
        d = self.points[self.segment_vertices[:, 1]] - self.points[self.segment_vertices[:, 0]]
        return d / self.lengths[:, None]

    @property
    def transmissivity(self) -> np.ndarray:
        """eps * K_c per segment."""
        return self.thickness * self.conductivity

    def segments_at(self, vertex: int) -> np.ndarray:
        """Segments incident to skeleton vertex ``vertex``."""
        return np.flatnonzero((self.segment_vertices == vertex).any(axis=1))


def extract_fracture_mesh(
    mesh: SimplicialMesh,
    network: FractureNetwork,
    sets: Optional[IntersectionSets] = None,
) -> FractureMesh:
    """Build the fracture sub-mesh from the conductive facet tags."""
    sets = network.intersections if sets is None else sets
    tol = network.tol
    conductive = network.conductive
    if not conductive:
        return FractureMesh.empty()
    tagged = np.flatnonzero(mesh.fracture_tags >= 0)
    unknown = set(np.unique(mesh.fracture_tags[tagged]).tolist()) - set(conductive)
    if unknown:
        raise InvalidMesh(f"facets tagged with non-conductive fracture ids {sorted(unknown)}")

    facet_parts, id_parts, segment_parts = [], [], []
    for index in conductive:
        fracture = network[index]
        facets = tagged[mesh.fracture_tags[tagged] == index]
        off = ~_facets_on(mesh, fracture, tol)[facets]
        if off.any():
            raise NotFitted(index, mesh.facet_midpoints[facets[off][0]], "tagged facet is off its fracture")
        gap = _coverage_gap(mesh, fracture, facets, tol)
        if gap is not None:
            raise NotFitted(index, gap)
        ends = mesh.facets[facets]
        t = fracture.parameter(mesh.vertices[ends].reshape(-1, 2)).reshape(-1, 2)
        forward = np.where((t[:, 0] <= t[:, 1])[:, None], ends, ends[:, ::-1])
        order = np.argsort(t.mean(axis=1))
        facet_parts.append(facets[order])
        id_parts.append(np.full(len(facets), index, dtype=np.int64))
        segment_parts.append(forward[order])

    facets = np.concatenate(facet_parts)
    fracture_ids = np.concatenate(id_parts)
    segments = np.concatenate(segment_parts)
    vertices, segment_vertices = np.unique(segments, return_inverse=True)
    segment_vertices = np.asarray(segment_vertices).reshape(-1, 2)
    points = mesh.vertices[vertices]
    classes = sets.classify(points)

    for point in sets.cb:
        if np.linalg.norm(points - point, axis=1).min() > tol:
            owners = [i for i in conductive if network[i].distance(point)[0][0] <= tol]
            raise NotFitted(owners[0] if owners else -1, point, "blocking crossing is not a mesh vertex")

    thickness = np.array([network[i].thickness for i in fracture_ids])
    conductivity = np.array([network[i].conductivity for i in fracture_ids])
    fracture_mesh = FractureMesh(
        facets=facets,
        fracture_ids=fracture_ids,
        segments=segments,
        vertices=vertices,
        segment_vertices=segment_vertices,
        vertex_classes=classes.astype(np.int64),
        points=points,
        thickness=thickness,
        conductivity=conductivity,
    )
    logger.info(
        "fracture mesh: %d segments, %d skeleton vertices on %d fractures",
        fracture_mesh.n_segments,
        fracture_mesh.n_vertices,
        len(conductive),
    )
    return fracture_mesh


def vertex_class_counts(fracture_mesh: FractureMesh) -> Dict[str, int]:
    """Number of skeleton vertices per point class, keyed by lower-case class name."""
    counts = np.bincount(fracture_mesh.vertex_classes, minlength=len(PointClass))
    return {cls.name.lower(): int(counts[cls]) for cls in PointClass}
