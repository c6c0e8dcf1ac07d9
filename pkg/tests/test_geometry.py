import numpy as np
import pytest

from frax.exceptions import (
    AmbiguousBoundaryPoint,
    InvalidBoundary,
    InvalidFracture,
    OverlappingFractures,
)
from frax.geometry import (
    BoundaryKind,
    DomainBoundary,
    Fracture,
    FractureKind,
    FractureNetwork,
    PointClass,
    classify_intersections,
    oriented_normal,
    point_segment_distance,
    segment_intersection,
)
from frax.benchmarks import DATA_DIR
from frax.io import read_fractures

UNIT = DomainBoundary.rectangle(0.0, 0.0, 1.0, 1.0, tags=("N", "D", "N", "N"))


def random_network(seed, n=5):
    """Random fractures in the unit square, some starting on the left or right side."""
    rng = np.random.default_rng(seed)
    fractures = []
    for _ in range(n):
        start, end = rng.uniform(0.05, 0.95, size=(2, 2))
        side = rng.integers(3)
        if side == 1:
            start[0] = 0.0
        elif side == 2:
            start[0] = 1.0
        kind = FractureKind.BLOCKING if rng.random() < 0.3 else FractureKind.CONDUCTIVE
        fractures.append(Fracture(start, end, 1e-3, kind, 1e-3))
    return fractures


def expected_class(point, fractures, tol):
    """Class of a special point from its boundary contact and the fractures through it."""
    kind = UNIT.classify_point(point, tol)
    if kind is BoundaryKind.DIRICHLET:
        return PointClass.CM_D
    if kind is BoundaryKind.NEUMANN:
        return PointClass.CM_N
    through = [f for f in fractures if f.distance(point)[0][0] <= tol]
    if any(f.is_blocking for f in through):
        return PointClass.CB
    if sum(f.is_conductive for f in through) >= 2:
        return PointClass.CC
    return PointClass.CI


def special_points(fractures, tol):
    """Conductive endpoints and every crossing that involves a conductive fracture."""
    points = [p for f in fractures if f.is_conductive for p in (f.a, f.b)]
    for i, fi in enumerate(fractures):
        for fj in fractures[i + 1 :]:
            if fi.is_blocking and fj.is_blocking:
                continue
            point = segment_intersection((fi.a, fi.b), (fj.a, fj.b), tol)
            if point is not None:
                points.append(point)
    unique = []
    for point in points:
        if all(np.linalg.norm(point - other) > tol for other in unique):
            unique.append(point)
    return unique


def same_points(first, second, atol=1e-9):
    if first.shape != second.shape:
        return False
    return all((np.linalg.norm(second - point, axis=1) <= atol).any() for point in first)


class TestFracture:
    """Test cases for single fracture segments."""

    def test_basic_properties(self):
        """Test length, tangent and left normal of a fracture."""
        fracture = Fracture((0.0, 0.0), (3.0, 4.0), 1e-3)

        assert fracture.length == pytest.approx(5.0)
        assert np.allclose(fracture.tangent, [0.6, 0.8])
        assert np.allclose(fracture.normal, [-0.8, 0.6])
        assert fracture.is_conductive
        assert not fracture.is_blocking

    def test_resistance(self):
        """Test that the normal resistance is thickness over conductivity."""
        fracture = Fracture((0, 0), (1, 0), 1e-4, FractureKind.BLOCKING, 1e-4)

        assert fracture.resistance == pytest.approx(1.0)

    def test_kind_from_string(self):
        """Test that kinds may be given by their file letter."""
        fracture = Fracture((0, 0), (1, 0), 1e-4, "B", 2.0)

        assert fracture.kind is FractureKind.BLOCKING

    @pytest.mark.parametrize("thickness", [0.0, -1e-3])
    def test_non_positive_thickness(self, thickness):
        """Test that a fracture needs a positive thickness."""
        with pytest.raises(InvalidFracture):
            Fracture((0, 0), (1, 0), thickness)

    def test_non_positive_conductivity(self):
        """Test that a fracture needs a positive conductivity."""
        with pytest.raises(InvalidFracture):
            Fracture((0, 0), (1, 0), 1e-3, conductivity=0.0)

    def test_degenerate_segment(self):
        """Test that coincident endpoints are rejected."""
        with pytest.raises(InvalidFracture):
            Fracture((0.5, 0.5), (0.5, 0.5), 1e-3)

    def test_oriented_normal(self):
        """Test the in-plane outward normals at the fracture ends."""
        oriented = oriented_normal(Fracture((0, 0), (2, 0), 1e-3))

        assert np.allclose(oriented.normal, [0.0, 1.0])
        assert np.allclose(oriented.eta_start, [-1.0, 0.0])
        assert np.allclose(oriented.eta_end, [1.0, 0.0])

    def test_with_kind(self):
        """Test that with_kind keeps the geometry and swaps kind and conductivity."""
        fracture = Fracture((0, 0), (1, 1), 1e-4, conductivity=1e4)
        blocking = fracture.with_kind(FractureKind.BLOCKING, 1e-4)

        assert blocking.start == fracture.start
        assert blocking.end == fracture.end
        assert blocking.is_blocking
        assert blocking.conductivity == 1e-4


class TestDistances:
    """Test cases for point-segment distances."""

    def test_point_segment_distance(self):
        """Test distances and clamped parameters."""
        points = np.array([[0.5, 1.0], [-1.0, 0.0], [2.0, 0.0]])
        dist, t = point_segment_distance(points, np.array([0.0, 0.0]), np.array([1.0, 0.0]))

        assert np.allclose(dist, [1.0, 1.0, 1.0])
        assert np.allclose(t, [0.5, 0.0, 1.0])


class TestSegmentIntersection:
    """Test cases for segment intersection."""

    def test_crossing(self):
        """Test the crossing point of the two diagonals."""
        point = segment_intersection(((0, 0), (1, 1)), ((0, 1), (1, 0)), 1e-10)

        assert np.allclose(point, [0.5, 0.5])

    def test_t_junction(self):
        """Test that an endpoint touching another segment is an intersection."""
        point = segment_intersection(((0, 0.5), (1, 0.5)), ((0.5, 0.5), (0.5, 1.0)), 1e-10)

        assert np.allclose(point, [0.5, 0.5])

    def test_disjoint(self):
        """Test that disjoint segments do not intersect."""
        assert segment_intersection(((0, 0), (1, 0)), ((0, 1), (1, 2)), 1e-10) is None
        assert segment_intersection(((0, 0), (1, 0)), ((2, -1), (2, 1)), 1e-10) is None

    def test_parallel_apart(self):
        """Test that parallel segments at a distance do not intersect."""
        assert segment_intersection(((0, 0), (1, 0)), ((0, 0.1), (1, 0.1)), 1e-10) is None

    def test_collinear_touching(self):
        """Test that collinear segments sharing one endpoint meet there."""
        point = segment_intersection(((0, 0), (1, 0)), ((1, 0), (2, 0)), 1e-10)

        assert np.allclose(point, [1.0, 0.0])

    def test_collinear_overlap(self):
        """Test that overlapping collinear segments are rejected."""
        with pytest.raises(OverlappingFractures):
            segment_intersection(((0, 0), (1, 0)), ((0.5, 0), (2, 0)), 1e-10)


class TestDomainBoundary:
    """Test cases for the domain boundary polygon."""

    def test_rectangle(self):
        """Test the rectangle constructor and its tags."""
        boundary = DomainBoundary.rectangle(0, 0, 2, 1, tags=("N", "D", "N", "D"))

        assert boundary.n_edges == 4
        assert boundary.area == pytest.approx(2.0)
        assert boundary.diameter == pytest.approx(np.sqrt(5.0))
        assert boundary.tol_geo == pytest.approx(1e-10 * np.sqrt(5.0))
        assert boundary.tags[1] is BoundaryKind.DIRICHLET

    def test_classify_point(self):
        """Test boundary classification of points."""
        assert UNIT.classify_point((1.0, 0.3)) is BoundaryKind.DIRICHLET
        assert UNIT.classify_point((0.0, 0.3)) is BoundaryKind.NEUMANN
        assert UNIT.classify_point((0.5, 0.5)) is None

    def test_ambiguous_corner(self):
        """Test that a corner between D and N edges is ambiguous."""
        with pytest.raises(AmbiguousBoundaryPoint):
            UNIT.classify_point((1.0, 0.0))

    def test_self_intersecting(self):
        """Test that a bow-tie polygon is rejected."""
        with pytest.raises(InvalidBoundary):
            DomainBoundary(np.array([[0, 0], [1, 1], [1, 0], [0, 1]]), ("N",) * 4)

    def test_tag_count(self):
        """Test that every edge needs a tag."""
        with pytest.raises(InvalidBoundary):
            DomainBoundary(np.array([[0, 0], [1, 0], [0, 1]]), ("N", "N"))


class TestClassification:
    """Test cases for intersection classification."""

    def test_regular_network(self):
        """Test the special points of the regular network."""
        fractures = read_fractures(DATA_DIR / "regular2d.txt")
        sets = classify_intersections(fractures, UNIT)

        assert len(sets.cc) == 9
        assert len(sets.cm_d) == 2
        assert len(sets.cm_n) == 4
        assert len(sets.cb) == 0
        assert len(sets.ci) == 0
        assert np.allclose(sets.cm_d, [[1.0, 0.5], [1.0, 0.75]])

    def test_isolated_tips(self):
        """Test that interior endpoints touching nothing are CI."""
        sets = classify_intersections([Fracture((0.2, 0.2), (0.4, 0.6), 1e-3)], UNIT)

        assert len(sets.ci) == 2
        assert sets.classify([[0.2, 0.2], [0.3, 0.4]]).tolist() == [
            PointClass.CI,
            PointClass.INTERIOR,
        ]

    def test_conductive_meets_blocking(self):
        """Test that conductive-blocking contacts are CB and take priority."""
        fractures = [
            Fracture((0.1, 0.5), (0.9, 0.5), 1e-3),
            Fracture((0.5, 0.1), (0.5, 0.9), 1e-3, FractureKind.BLOCKING, 1e-3),
            Fracture((0.3, 0.2), (0.3, 0.5), 1e-3),
        ]
        sets = classify_intersections(fractures, UNIT)

        assert np.allclose(sets.cb, [[0.5, 0.5]])
        assert np.allclose(sets.cc, [[0.3, 0.5]])
        assert len(sets.ci) == 3

    def test_overlapping_fractures(self):
        """Test that collinear overlapping fractures name both indices."""
        fractures = [
            Fracture((0.1, 0.5), (0.6, 0.5), 1e-3),
            Fracture((0.4, 0.5), (0.9, 0.5), 1e-3),
        ]
        with pytest.raises(OverlappingFractures) as info:
            classify_intersections(fractures, UNIT)

        assert "fractures 0 and 1" in str(info.value)

    def test_blocking_overlap_allowed(self):
        """Test that collinear overlapping barriers are accepted."""
        fractures = [
            Fracture((0.1, 0.5), (0.6, 0.5), 1e-3, FractureKind.BLOCKING, 1e-3),
            Fracture((0.4, 0.5), (0.9, 0.5), 1e-3, FractureKind.BLOCKING, 1e-3),
        ]
        sets = classify_intersections(fractures, UNIT)

        assert len(sets) == 0

    def test_conductive_on_barrier_overlap(self):
        """Test that a conductive fracture overlapping a barrier is still rejected."""
        fractures = [
            Fracture((0.1, 0.5), (0.6, 0.5), 1e-3),
            Fracture((0.4, 0.5), (0.9, 0.5), 1e-3, FractureKind.BLOCKING, 1e-3),
        ]
        with pytest.raises(OverlappingFractures):
            classify_intersections(fractures, UNIT)

    @pytest.mark.parametrize("seed", range(12))
    def test_partition_random_networks(self, seed):
        """Test that every special point of a random network lands in exactly one class."""
        fractures = random_network(seed)
        sets = classify_intersections(fractures, UNIT)
        points = special_points(fractures, sets.tol)

        assert len(sets) == len(points)
        for point in points:
            hits = [
                kind
                for kind, members in sets.as_dict().items()
                if len(members) and (np.linalg.norm(members - point, axis=1) <= sets.tol).any()
            ]
            assert hits == [expected_class(point, fractures, sets.tol)]

    @pytest.mark.parametrize("seed", range(5))
    def test_permutation_invariance(self, seed):
        """Test that reordering the fractures does not change the special points."""
        rng = np.random.default_rng(seed)
        for fractures in (read_fractures(DATA_DIR / "regular2d.txt"), random_network(100 + seed)):
            order = rng.permutation(len(fractures))
            base = classify_intersections(fractures, UNIT).as_dict()
            shuffled = classify_intersections([fractures[i] for i in order], UNIT).as_dict()
            for kind, points in base.items():
                assert same_points(points, shuffled[kind])

    def test_split_points(self):
        """Test that split points are sorted along the fracture."""
        network = FractureNetwork(read_fractures(DATA_DIR / "regular2d.txt"), UNIT)
        points = network.split_points(0)

        assert np.allclose(points[:, 1], 0.5)
        assert np.allclose(points[:, 0], [0.0, 0.5, 0.625, 0.75, 1.0])
