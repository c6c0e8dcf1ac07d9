"""
Exception hierarchy for frax.

Every error raised on purpose by the library derives from ``FraxError`` so
callers (the CLI in particular) can catch the whole family at once.
"""

from __future__ import annotations

from typing import Optional, Sequence


class FraxError(Exception):
    """Base class for all frax errors."""


class ConfigError(FraxError, ValueError):
    """Invalid configuration file, key or value."""


class FraxIOError(FraxError, OSError):
    """Reading or writing a file failed, or an input file is malformed."""


# Geometry


class GeometryError(FraxError):
    """Invalid fracture network or domain boundary."""


class InvalidFracture(GeometryError, ValueError):
    """A fracture violates its construction invariants."""


class InvalidBoundary(GeometryError, ValueError):
    """The domain boundary is not a simple closed polygon."""


class OverlappingFractures(GeometryError):
    """Two fractures overlap along a segment or touch tangentially."""

    def __init__(self, first: int, second: int, message: str = ""):
        self.first = first
        self.second = second
        super().__init__(
            message or f"fractures {first} and {second} overlap or touch tangentially"
        )


class AmbiguousBoundaryPoint(GeometryError):
    """A fracture ends exactly where Dirichlet and Neumann boundary parts meet."""

    def __init__(self, point: Sequence[float]):
        self.point = tuple(float(v) for v in point)
        super().__init__(
            f"point ({self.point[0]:.6g}, {self.point[1]:.6g}) lies on a "
            "Dirichlet/Neumann junction"
        )


# Mesh


class MeshError(FraxError):
    """Invalid mesh or a mesh operation that cannot be completed."""


class InvalidMesh(MeshError, ValueError):
    """The mesh violates orientation, incidence or tagging invariants."""


class NotFitted(MeshError):
    """A conductive fracture is not covered by a chain of tagged facets."""

    def __init__(
        self,
        fracture_id: int,
        location: Optional[Sequence[float]] = None,
        message: str = "",
    ):
        self.fracture_id = fracture_id
        self.location = None if location is None else tuple(float(v) for v in location)
        where = ""
        if self.location is not None:
            where = f" near ({self.location[0]:.6g}, {self.location[1]:.6g})"
        super().__init__(message or f"fracture {fracture_id} is not fitted{where}")


class DegenerateCut(MeshError):
    """Cutting a cell along a fracture produced a sub-cell of negligible area."""


class PointOutsideDomain(MeshError):
    """A query point lies outside every cell of the mesh."""


# Flow


class FlowError(FraxError):
    """Invalid flow problem."""


class InvalidProblem(FlowError, ValueError):
    """A flow or transport problem parameter is out of range."""


class SingularTensor(FlowError):
    """A permeability tensor is not symmetric positive definite."""

    def __init__(self, cell: int):
        self.cell = cell
        super().__init__(f"permeability of cell {cell} is not SPD")


class NoDirichlet(FlowError):
    """The problem has no Dirichlet data, so pressure is only defined up to a constant."""


# Linear algebra


class SolverError(FraxError):
    """A linear solve failed."""


class NotSPD(SolverError):
    """The matrix handed to the Cholesky solver is not symmetric positive definite."""


class NoConvergence(SolverError):
    """An iterative solver reached its iteration cap."""

    def __init__(self, max_iter: int, residual: float):
        self.max_iter = max_iter
        self.residual = residual
        super().__init__(
            f"no convergence after {max_iter} iterations (residual {residual:.3e})"
        )


class Singular(SolverError):
    """The LU factorization hit a zero pivot."""


# Transport


class TransportError(FraxError):
    """Transport step failed."""


class SingularTransportSystem(TransportError):
    """The implicit upwind matrix lost diagonal dominance or is singular."""


# Benchmarks


class BenchmarkError(FraxError):
    """A benchmark cannot be built."""


class UnknownBenchmark(BenchmarkError, KeyError):
    """The benchmark id is not registered."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown benchmark"


class MissingGeometryFile(BenchmarkError, FileNotFoundError):
    """A benchmark needs a fracture geometry file that is not available."""
