"""
Fracture network geometry.

Fractures are straight segments with a thickness, a kind (conductive or
blocking) and a scalar conductivity. The domain is a simple polygon whose
edges carry a Dirichlet or Neumann tag. ``classify_intersections`` sorts the
special points of a network into the sets the flow discretization needs.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    AmbiguousBoundaryPoint,
    InvalidBoundary,
    InvalidFracture,
    OverlappingFractures,
)

logger = logging.getLogger(__name__)

# Relative geometric tolerance, scaled by the domain diameter.
TOL_GEO_RELATIVE = 1e-10


class FractureKind(str, enum.Enum):
    CONDUCTIVE = "C"
    BLOCKING = "B"


class BoundaryKind(str, enum.Enum):
    DIRICHLET = "D"
    NEUMANN = "N"


class PointClass(enum.IntEnum):
    """Class of a fracture skeleton vertex."""

    INTERIOR = 0
    CC = 1  # conductive-conductive crossing
    CB = 2  # conductive meets blocking
    CM_D = 3  # conductive meets Dirichlet boundary
    CM_N = 4  # conductive meets Neumann boundary
    CI = 5  # immersed tip


# Higher wins when a point qualifies for several classes.
_PRIORITY = {
    PointClass.CI: 0,
    PointClass.CC: 1,
    PointClass.CB: 2,
    PointClass.CM_N: 3,
    PointClass.CM_D: 4,
}


def _as_point(value: Any) -> np.ndarray:
    point = np.asarray(value, dtype=float).reshape(-1)
    if point.shape != (2,) or not np.all(np.isfinite(point)):
        raise InvalidFracture(f"invalid point {value!r}")
    return point


def _as_scalar(value: Any, name: str) -> float:
    """Accept a scalar or a 1x1 tensor."""
    array = np.asarray(value, dtype=float)
    if array.size != 1:
        raise InvalidFracture(f"{name} must be a scalar or a 1x1 tensor")
    return float(array.reshape(-1)[0])


def point_segment_distance(
    points: np.ndarray, a: np.ndarray, b: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Distance of each point to segment ab and the clamped segment parameter."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    length2 = float(d @ d)
    if length2 == 0.0:
        return np.linalg.norm(points - a, axis=1), np.zeros(len(points))
    t = np.clip((points - a) @ d / length2, 0.0, 1.0)
    closest = a + t[:, None] * d
    return np.linalg.norm(points - closest, axis=1), t


def _cross(u: np.ndarray, v: np.ndarray) -> Any:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass(frozen=True)
class Fracture:
    """A straight fracture segment.

    ``conductivity`` is the tangential permeability K_c for conductive
    fractures and the normal permeability K_b for blocking ones.
    """

    start: Tuple[float, float]
    end: Tuple[float, float]
    thickness: float
    kind: FractureKind = FractureKind.CONDUCTIVE
    conductivity: float = 1.0

    def __post_init__(self) -> None:
        start = _as_point(self.start)
        end = _as_point(self.end)
        object.__setattr__(self, "start", (float(start[0]), float(start[1])))
        object.__setattr__(self, "end", (float(end[0]), float(end[1])))
        object.__setattr__(self, "kind", FractureKind(self.kind))
        thickness = _as_scalar(self.thickness, "thickness")
        conductivity = _as_scalar(self.conductivity, "conductivity")
        object.__setattr__(self, "thickness", thickness)
        object.__setattr__(self, "conductivity", conductivity)
        if not thickness > 0.0:
            raise InvalidFracture(f"thickness must be positive, got {thickness}")
        if not conductivity > 0.0:
            raise InvalidFracture(f"conductivity must be positive, got {conductivity}")
        if np.allclose(start, end, rtol=0.0, atol=0.0):
            raise InvalidFracture("fracture endpoints coincide")

    @property
    def is_conductive(self) -> bool:
        return self.kind is FractureKind.CONDUCTIVE

    @property
    def is_blocking(self) -> bool:
        return self.kind is FractureKind.BLOCKING

    @property
    def a(self) -> np.ndarray:
        return np.array(self.start)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.end)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def tangent(self) -> np.ndarray:
        """Unit tangent from start to end."""
        return (self.b - self.a) / self.length

    @property
    def normal(self) -> np.ndarray:
        """Unit left normal of the tangent."""
        t = self.tangent
        return np.array([-t[1], t[0]])

    @property
    def resistance(self) -> float:
        """Normal resistance eps / K_b of a blocking fracture."""
        return self.thickness / self.conductivity

    def point_at(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.a + t[..., None] * (self.b - self.a)

    def distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return point_segment_distance(points, self.a, self.b)

    def parameter(self, points: np.ndarray) -> np.ndarray:
        """Unclamped parameter of the projection of points onto the fracture line."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.b - self.a
        return (points - self.a) @ d / float(d @ d)

    def with_kind(self, kind: FractureKind, conductivity: float) -> "Fracture":
        return Fracture(self.start, self.end, self.thickness, kind, conductivity)


@dataclass(frozen=True)
class OrientedNormal:
    """Normal of a fracture and its in-plane outward normals at the endpoints."""

    normal: np.ndarray
    tangent: np.ndarray

    @property
    def eta_start(self) -> np.ndarray:
        return -self.tangent

    @property
    def eta_end(self) -> np.ndarray:
        return self.tangent


def oriented_normal(fracture: Fracture) -> OrientedNormal:
    return OrientedNormal(normal=fracture.normal, tangent=fracture.tangent)


@dataclass(frozen=True, eq=False)
class DomainBoundary:
    """Simple closed polygon with a Dirichlet/Neumann tag per edge.

    Edge ``i`` runs from ``vertices[i]`` to ``vertices[i + 1]`` (cyclic).
    """

    vertices: np.ndarray
    tags: Tuple[BoundaryKind, ...]
    names: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        vertices = np.asarray(self.vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 3:
            raise InvalidBoundary("boundary needs at least three 2D vertices")
        tags = tuple(BoundaryKind(tag) for tag in self.tags)
        if len(tags) != len(vertices):
            raise InvalidBoundary(
                f"{len(vertices)} edges but {len(tags)} boundary tags"
            )
        names = tuple(self.names) or tuple(str(i) for i in range(len(vertices)))
        if len(names) != len(vertices):
            raise InvalidBoundary("one name per boundary edge expected")
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "names", names)
        self._check_simple()

    @classmethod
    def rectangle(
        cls,
        x0: float,
        y0: float,
        x1: float,
        y1: float,
        tags: Sequence[Any] = ("N", "N", "N", "N"),
    ) -> "DomainBoundary":
        """Axis-aligned rectangle; tags are given as (bottom, right, top, left)."""
        vertices = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
        return cls(vertices, tuple(tags), ("bottom", "right", "top", "left"))

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    @property
    def edges(self) -> np.ndarray:
        """Edge endpoints, shape (n, 2, 2)."""
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1)

    @cached_property
    def diameter(self) -> float:
        diff = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((diff**2).sum(axis=2)).max())

    @cached_property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return float(abs(0.5 * (x @ np.roll(y, -1) - y @ np.roll(x, -1))))

    @property
    def tol_geo(self) -> float:
        return TOL_GEO_RELATIVE * self.diameter

    def _check_simple(self) -> None:
        edges = self.edges
        n = len(edges)
        p, r = edges[:, 0], edges[:, 1] - edges[:, 0]
        if np.any(np.linalg.norm(r, axis=1) == 0.0):
            raise InvalidBoundary("boundary has a zero-length edge")
        for i in range(n):
            # Edges adjacent to i share an endpoint and are skipped.
            others = [j for j in range(i + 1, n) if j != (i + 1) % n and (j + 1) % n != i]
            if not others:
                continue
            q, s = p[others], r[others]
            rxs = _cross(r[i], s)
            qp = q - p[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = _cross(qp, s) / rxs
                u = _cross(qp, r[i]) / rxs
            hit = (rxs != 0.0) & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
            if np.any(hit):
                raise InvalidBoundary(f"boundary edge {i} crosses another edge")

    def distances(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to each edge, shape (npoints, nedges)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        a = self.vertices
        d = np.roll(self.vertices, -1, axis=0) - a
        rel = points[:, None, :] - a[None, :, :]
        t = np.clip((rel * d).sum(axis=2) / (d * d).sum(axis=1), 0.0, 1.0)
        closest = a[None] + t[..., None] * d[None]
        return np.linalg.norm(points[:, None, :] - closest, axis=2)

    def locate(self, points: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
        """Index of the nearest boundary edge for each point, -1 when off the boundary."""
        tol = self.tol_geo if tol is None else tol
        dist = self.distances(points)
        index = dist.argmin(axis=1)
        index[dist[np.arange(len(dist)), index] > tol] = -1
        return index

    def classify_point(
        self, point: Sequence[float], tol: Optional[float] = None
    ) -> Optional[BoundaryKind]:
        """Boundary tag at a point, ``None`` for points off the boundary."""
        tol = self.tol_geo if tol is None else tol
        dist = self.distances(np.asarray(point, dtype=float))[0]
        touching = np.flatnonzero(dist <= tol)
        if len(touching) == 0:
            return None
        kinds = {self.tags[i] for i in touching}
        if len(kinds) > 1:
            raise AmbiguousBoundaryPoint(point)
        return kinds.pop()


@dataclass(frozen=True, eq=False)
class IntersectionSets:
    """Special points of a fracture network, each array of shape (k, 2)."""

    cc: np.ndarray
    cb: np.ndarray
    cm_d: np.ndarray
    cm_n: np.ndarray
    ci: np.ndarray
    tol: float

    def __len__(self) -> int:
        return sum(len(points) for points in self.as_dict().values())

    def as_dict(self) -> Dict[PointClass, np.ndarray]:
        return {
            PointClass.CC: self.cc,
            PointClass.CB: self.cb,
            PointClass.CM_D: self.cm_d,
            PointClass.CM_N: self.cm_n,
            PointClass.CI: self.ci,
        }

    def classify(self, points: np.ndarray) -> np.ndarray:
        """Class of each point; points in no set are INTERIOR."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        result = np.full(len(points), int(PointClass.INTERIOR), dtype=int)
        for kind, members in self.as_dict().items():
            if len(members) == 0:
                continue
            dist = np.linalg.norm(points[:, None, :] - members[None, :, :], axis=2)
            result[(dist <= self.tol).any(axis=1)] = int(kind)
        return result


def segment_intersection(
    a: Tuple[np.ndarray, np.ndarray],
    b: Tuple[np.ndarray, np.ndarray],
    tol_geo: float,
) -> Optional[np.ndarray]:
    """Intersection point of two segments, ``None`` when they do not meet.

    Segments are given as ``(start, end)`` pairs. Collinear or nearly
    tangential segments that share more than a point raise
    ``OverlappingFractures``.
    """
    p, p1 = np.asarray(a[0], dtype=float), np.asarray(a[1], dtype=float)
    q, q1 = np.asarray(b[0], dtype=float), np.asarray(b[1], dtype=float)
    r, s = p1 - p, q1 - q
    la, lb = float(np.linalg.norm(r)), float(np.linalg.norm(s))
    rxs = float(_cross(r, s))
    qp = q - p

    if abs(rxs) <= tol_geo * max(la, lb):
        # Parallel within tolerance.
        offset = abs(float(_cross(qp, r))) / la
        if offset > tol_geo:
            return None
        t0 = float(qp @ r) / la**2
        t1 = float((qp + s) @ r) / la**2
        lo, hi = min(t0, t1), max(t0, t1)
        overlap = (min(1.0, hi) - max(0.0, lo)) * la
        if overlap > tol_geo:
            raise OverlappingFractures(-1, -1, "collinear fractures overlap")
        if overlap < -tol_geo:
            return None
        return p + np.clip(0.5 * (max(0.0, lo) + min(1.0, hi)), 0.0, 1.0) * r

    t = float(_cross(qp, s)) / rxs
    u = float(_cross(qp, r)) / rxs
    ta, tb = tol_geo / la, tol_geo / lb
    if -ta <= t <= 1.0 + ta and -tb <= u <= 1.0 + tb:
        point = p + np.clip(t, 0.0, 1.0) * r
        # Near-tangential pairs: the crossing is ill-conditioned.
        sin_angle = abs(rxs) / (la * lb)
        if sin_angle < 1e-8:
            raise OverlappingFractures(-1, -1, "fractures touch tangentially")
        return point
    return None


def classify_intersections(
    network: Sequence[Fracture],
    boundary: DomainBoundary,
    tol_geo: Optional[float] = None,
) -> IntersectionSets:
    """Sort the special points of a fracture network into CC/CB/CM_D/CM_N/CI.

    Pairs involving a conductive fracture must not overlap; blocking pairs
    are not intersected at all, their resistances add up where they overlap.
    """
    tol = boundary.tol_geo if tol_geo is None else tol_geo
    fractures = list(network)
    conductive = [i for i, f in enumerate(fractures) if f.is_conductive]
    blocking = [i for i, f in enumerate(fractures) if f.is_blocking]
    candidates: List[Tuple[np.ndarray, PointClass]] = []

    def boundary_class(point: np.ndarray) -> Optional[PointClass]:
        kind = boundary.classify_point(point, tol)
        if kind is BoundaryKind.DIRICHLET:
            return PointClass.CM_D
        if kind is BoundaryKind.NEUMANN:
            return PointClass.CM_N
        return None

    def intersect(i: int, j: int) -> Optional[np.ndarray]:
        fi, fj = fractures[i], fractures[j]
        try:
            return segment_intersection((fi.a, fi.b), (fj.a, fj.b), tol)
        except OverlappingFractures as exc:
            raise OverlappingFractures(i, j, f"fractures {i} and {j}: {exc}") from exc

    for i in conductive:
        fracture = fractures[i]
        for endpoint in (fracture.a, fracture.b):
            kind = boundary_class(endpoint)
            if kind is None:
                touches_blocking = any(
                    fractures[j].distance(endpoint)[0][0] <= tol for j in blocking
                )
                touches_conductive = any(
                    fractures[j].distance(endpoint)[0][0] <= tol
                    for j in conductive
                    if j != i
                )
                if touches_blocking:
                    kind = PointClass.CB
                elif touches_conductive:
                    kind = PointClass.CC
                else:
                    kind = PointClass.CI
            candidates.append((endpoint, kind))

    for pos, i in enumerate(conductive):
        for j in conductive[pos + 1 :]:
            point = intersect(i, j)
            if point is not None:
                candidates.append((point, boundary_class(point) or PointClass.CC))
        for j in blocking:
            point = intersect(i, j)
            if point is not None:
                candidates.append((point, boundary_class(point) or PointClass.CB))

    accepted: List[Tuple[np.ndarray, PointClass]] = []
    for point, kind in candidates:
        for index, (other, other_kind) in enumerate(accepted):
            if np.linalg.norm(point - other) <= tol:
                if _PRIORITY[kind] > _PRIORITY[other_kind]:
                    accepted[index] = (other, kind)
                break
        else:
            accepted.append((point, kind))

    def collect(kind: PointClass) -> np.ndarray:
        points = np.array([p for p, k in accepted if k is kind], dtype=float)
        if len(points) == 0:
            return np.zeros((0, 2))
        order = np.lexsort((points[:, 1], points[:, 0]))
        return points[order]

    sets = IntersectionSets(
        cc=collect(PointClass.CC),
        cb=collect(PointClass.CB),
        cm_d=collect(PointClass.CM_D),
        cm_n=collect(PointClass.CM_N),
        ci=collect(PointClass.CI),
        tol=tol,
    )
    logger.debug(
        "classified %d special points: cc=%d cb=%d cm_d=%d cm_n=%d ci=%d",
        len(sets),
        len(sets.cc),
        len(sets.cb),
        len(sets.cm_d),
        len(sets.cm_n),
        len(sets.ci),
    )
    return sets


@dataclass(frozen=True, eq=False)
class FractureNetwork:
    """Fractures together with the domain they live in."""

    fractures: Tuple[Fracture, ...]
    boundary: DomainBoundary
    tol_geo: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "fractures", tuple(self.fractures))
        if self.tol_geo is None:
            object.__setattr__(self, "tol_geo", self.boundary.tol_geo)

    def __len__(self) -> int:
        return len(self.fractures)

    def __iter__(self):
        return iter(self.fractures)

    def __getitem__(self, index: int) -> Fracture:
        return self.fractures[index]

    @property
    def tol(self) -> float:
        return float(self.tol_geo)  # type: ignore[arg-type]

    @property
    def conductive(self) -> List[int]:
        return [i for i, f in enumerate(self.fractures) if f.is_conductive]

    @property
    def blocking(self) -> List[int]:
        return [i for i, f in enumerate(self.fractures) if f.is_blocking]

    @cached_property
    def intersections(self) -> IntersectionSets:
        return classify_intersections(self.fractures, self.boundary, self.tol)

    def split_points(self, index: int) -> np.ndarray:
        """Endpoints and special points lying on fracture ``index``, sorted along it."""
        fracture = self.fractures[index]
        points = [fracture.a, fracture.b]
        for members in self.intersections.as_dict().values():
            if len(members):
                dist, _ = fracture.distance(members)
                points.extend(members[dist <= self.tol])
        stacked = np.array(points)
        t = fracture.parameter(stacked)
        order = np.argsort(t, kind="stable")
        stacked, t = stacked[order], t[order]
        keep = np.concatenate([[True], np.diff(t) * fracture.length > self.tol])
        return stacked[keep]
