"""
Built-in 2D benchmark problems.

Every builder returns a :class:`BenchmarkCase` on refinement level ``level``:
the level-0 mesh is built (and fitted to the conductive fractures), then
refined uniformly ``level`` times, so all levels of one benchmark are nested.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import MissingGeometryFile, UnknownBenchmark
from .flow import DEFAULT_PENALTY, FlowProblem, build_dof_layout
from .geometry import DomainBoundary, Fracture, FractureKind, FractureNetwork
from .io import read_fractures
from .mesh import (
    FractureMesh,
    SimplicialMesh,
    extract_fracture_mesh,
    immerse_network,
    rectangle_mesh,
    refine_uniform,
    tag_fracture_facets,
)
from .transport import TransportProblem

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

Line = Tuple[Tuple[float, float], Tuple[float, float]]


@dataclass(eq=False)
class BenchmarkCase:
    """A fully specified benchmark problem on one refinement level."""

    id: str
    level: int
    network: FractureNetwork
    mesh: SimplicialMesh
    fracture_mesh: FractureMesh
    flow_problem: FlowProblem
    transport_problem: Optional[TransportProblem] = None
    lines: Dict[str, Line] = field(default_factory=dict)
    fitted: bool = True
    subcase: str = "a"


def _refine(mesh: SimplicialMesh, level: int) -> SimplicialMesh:
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


def _fracture_file(name: str, geometry_path: Optional[Path]) -> Path:
    """Path of a fracture file, bundled unless ``geometry_path`` is given."""
    path = Path(geometry_path) if geometry_path is not None else DATA_DIR / f"{name}.txt"
    if not path.exists():
        raise MissingGeometryFile(
            f"fracture geometry for {name} not found at {path}; pass geometry_path"
        )
    return path


def _finish(
    name: str,
    level: int,
    network: FractureNetwork,
    mesh: SimplicialMesh,
    *,
    dirichlet: Any,
    neumann: Any = 0.0,
    penalty: float = DEFAULT_PENALTY,
    transport: Optional[TransportProblem] = None,
    lines: Optional[Dict[str, Line]] = None,
    fitted: bool = True,
    subcase: str = "a",
) -> BenchmarkCase:
    mesh = _refine(mesh, level)
    fracture_mesh = extract_fracture_mesh(mesh, network)
    blocking = [network[i] for i in network.blocking]
    problem = FlowProblem(
        mesh,
        fracture_mesh,
        blocking=blocking,
        dirichlet=dirichlet,
        neumann=neumann,
        penalty=penalty,
        tol_geo=network.tol,
    )
    logger.info(
        "benchmark %s level %d: %d cells, %d fracture segments",
        name,
        level,
        mesh.n_cells,
        fracture_mesh.n_segments,
    )
    return BenchmarkCase(
        id=name,
        level=level,
        network=network,
        mesh=mesh,
        fracture_mesh=fracture_mesh,
        flow_problem=problem,
        transport_problem=transport,
        lines=dict(lines or {}),
        fitted=fitted,
        subcase=subcase,
    )


# Hydrocoin


HYDROCOIN_POLYGON = np.array(
    [
        [0.0, 150.0],
        [400.0, 100.0],
        [800.0, 150.0],
        [1200.0, 100.0],
        [1600.0, 150.0],
        [1600.0, -1000.0],
        [1500.0, -1000.0],
        [1000.0, -1000.0],
        [0.0, -1000.0],
    ]
)


def _hydrocoin_top(x: np.ndarray) -> np.ndarray:
    return np.interp(x, HYDROCOIN_POLYGON[:5, 0], HYDROCOIN_POLYGON[:5, 1])


def build_hydrocoin(level: int = 0, *, penalty: float = DEFAULT_PENALTY, **_: Any) -> BenchmarkCase:
    """Hydrocoin cross-section with two conductive fault zones."""
    tags = ("D", "D", "D", "D", "N", "N", "N", "N", "N")
    names = ("AB", "BC", "CD", "DE", "EF", "FG", "GH", "HI", "IA")
    boundary = DomainBoundary(HYDROCOIN_POLYGON, tags, names)
    fractures = [
        Fracture((400.0, 100.0), (1500.0, -1000.0), 5.0 * np.sqrt(2.0), FractureKind.CONDUCTIVE, 1e-6),
        Fracture((1200.0, 100.0), (1000.0, -1000.0), 33.0 / np.sqrt(5.0), FractureKind.CONDUCTIVE, 1e-6),
    ]
    network = FractureNetwork(fractures, boundary)

    def mapping(points: np.ndarray) -> np.ndarray:
        x, s = points[:, 0], points[:, 1]
        return np.column_stack([x, -1000.0 + (_hydrocoin_top(x) + 1000.0) * s])

    mesh = rectangle_mesh(
        np.linspace(0.0, 1600.0, 29),
        np.linspace(0.0, 1.0, 21),
        boundary=boundary,
        permeability=1e-8,
        mapping=mapping,
    )
    mesh = immerse_network(mesh, network)
    return _finish(
        "hydrocoin",
        level,
        network,
        mesh,
        dirichlet=lambda points: points[:, 1],
        penalty=penalty,
        lines={"y_minus_200": ((0.0, -200.0), (1600.0, -200.0))},
    )


# Regular network


REGULAR_LINES: Dict[str, Line] = {
    "y_0.7": ((0.0, 0.7), (1.0, 0.7)),
    "x_0.5": ((0.5, 0.0), (0.5, 1.0)),
    "diagonal": ((0.0, 0.1), (0.9, 1.0)),
}


def regular_grid_lines() -> np.ndarray:
    """Grid lines of the fitted regular-network mesh: i/24 plus 1/48 and 47/48."""
    return np.unique(np.concatenate([np.arange(25) / 24.0, [1.0 / 48.0, 47.0 / 48.0]]))


def regular_unfitted_lines() -> np.ndarray:
    """Grid lines of the unfitted regular-network mesh: 0, (3i - 1)/81 for i = 1..26, 1.

    The interior lines are shifted by a third of the spacing, so no dyadic
    refinement of this grid has a line at 1/2, 5/8 or 3/4.
    """
    return np.concatenate([[0.0], (3.0 * np.arange(1, 27) - 1.0) / 81.0, [1.0]])


def _left_inflow(points: np.ndarray) -> np.ndarray:
    return np.where(points[:, 0] <= 1e-12, -1.0, 0.0)


def regular_transport_problem(level: int, base_time_step: float = 5e-3) -> TransportProblem:
    """Transport data of the regular network on refinement level ``level``."""
    return TransportProblem(
        porosity=0.1,
        fracture_porosity=0.9,
        initial=0.0,
        inflow=1.0,
        time_step=base_time_step * 2.0**-level,
        final_time=0.1,
    )


def build_regular(
    level: int = 0,
    *,
    kind: FractureKind = FractureKind.CONDUCTIVE,
    fitted: bool = True,
    penalty: float = DEFAULT_PENALTY,
    geometry_path: Optional[Path] = None,
    **_: Any,
) -> BenchmarkCase:
    """Regular six-fracture network on the unit square."""
    kind = FractureKind(kind)
    boundary = DomainBoundary.rectangle(0.0, 0.0, 1.0, 1.0, tags=("N", "D", "N", "N"))
    fractures = read_fractures(_fracture_file("regular2d", geometry_path))
    if kind is FractureKind.BLOCKING:
        fractures = [f.with_kind(FractureKind.BLOCKING, 1e-4) for f in fractures]
    network = FractureNetwork(fractures, boundary)
    fitted = fitted or kind is FractureKind.CONDUCTIVE
    if fitted:
        lines = regular_grid_lines()
        mesh = tag_fracture_facets(rectangle_mesh(lines, lines, boundary=boundary), network)
    else:
        grid = regular_unfitted_lines()
        mesh = rectangle_mesh(grid, grid, boundary=boundary)
    name = f"regular2d-{kind.name.lower()}"
    return _finish(
        name,
        level,
        network,
        mesh,
        dirichlet=1.0,
        neumann=_left_inflow,
        penalty=penalty,
        transport=regular_transport_problem(level),
        lines=REGULAR_LINES,
        fitted=fitted,
    )


# Complex network


def build_complex(
    level: int = 0,
    *,
    subcase: str = "a",
    penalty: float = DEFAULT_PENALTY,
    geometry_path: Optional[Path] = None,
    **_: Any,
) -> BenchmarkCase:
    """Ten-fracture network with two barriers; subcase a or b sets the gradient."""
    if subcase == "a":
        tags = ("D", "N", "D", "N")

        def dirichlet(points: np.ndarray) -> np.ndarray:
            return np.where(points[:, 1] > 0.5, 4.0, 1.0)

    elif subcase == "b":
        tags = ("N", "D", "N", "D")

        def dirichlet(points: np.ndarray) -> np.ndarray:
            return np.where(points[:, 0] < 0.5, 4.0, 1.0)

    else:
        raise UnknownBenchmark(f"complex2d has no subcase {subcase!r}")
    boundary = DomainBoundary.rectangle(0.0, 0.0, 1.0, 1.0, tags=tags)
    network = FractureNetwork(read_fractures(_fracture_file("complex2d", geometry_path)), boundary)
    grid = np.linspace(0.0, 1.0, 27)
    mesh = immerse_network(rectangle_mesh(grid, grid, boundary=boundary), network)
    return _finish(
        "complex2d",
        level,
        network,
        mesh,
        dirichlet=dirichlet,
        penalty=penalty,
        lines={"diagonal": ((0.0, 0.5), (1.0, 0.9))},
        subcase=subcase,
    )


# Sotra outcrop


def build_sotra(
    level: int = 0,
    *,
    penalty: float = DEFAULT_PENALTY,
    geometry_path: Optional[Path] = None,
    **_: Any,
) -> BenchmarkCase:
    """Outcrop network read from a user-supplied fracture file."""
    boundary = DomainBoundary.rectangle(0.0, 0.0, 700.0, 600.0, tags=("N", "D", "N", "D"))
    fractures = [
        Fracture(f.start, f.end, 1e-2, FractureKind.CONDUCTIVE, 1e-8)
        for f in read_fractures(_fracture_file("sotra2d", geometry_path))
    ]
    network = FractureNetwork(fractures, boundary)
    mesh = rectangle_mesh(
        np.linspace(0.0, 700.0, 71),
        np.linspace(0.0, 600.0, 61),
        boundary=boundary,
        permeability=1e-14,
    )
    mesh = immerse_network(mesh, network)
    return _finish(
        "sotra2d",
        level,
        network,
        mesh,
        dirichlet=lambda points: np.where(points[:, 0] < 350.0, 1013250.0, 0.0),
        penalty=penalty,
        lines={"y_500": ((0.0, 500.0), (700.0, 500.0)), "x_625": ((625.0, 0.0), (625.0, 600.0))},
    )


BENCHMARKS: Dict[str, Callable[..., BenchmarkCase]] = {
    "hydrocoin": build_hydrocoin,
    "regular2d-conductive": lambda level=0, **kw: build_regular(level, kind=FractureKind.CONDUCTIVE, **kw),
    "regular2d-blocking": lambda level=0, **kw: build_regular(level, kind=FractureKind.BLOCKING, **kw),
    "complex2d": build_complex,
    "sotra2d": build_sotra,
}


def build_benchmark(
    benchmark_id: str,
    level: int = 0,
    *,
    fitted: bool = True,
    subcase: str = "a",
    geometry_path: Optional[Path] = None,
    penalty: float = DEFAULT_PENALTY,
) -> BenchmarkCase:
    """Build benchmark ``benchmark_id`` on refinement level ``level``.

    ``fitted=False`` is only meaningful for ``regular2d-blocking``; the
    other benchmarks ignore it.
    """
    if benchmark_id not in BENCHMARKS:
        raise UnknownBenchmark(benchmark_id)
    if level < 0:
        raise ValueError(f"level must not be negative, got {level}")
    kwargs: Dict[str, Any] = {"penalty": penalty, "geometry_path": geometry_path}
    if benchmark_id == "regular2d-blocking":
        kwargs["fitted"] = fitted
    if benchmark_id == "complex2d":
        kwargs["subcase"] = subcase
    return BENCHMARKS[benchmark_id](level, **kwargs)


def dof_summary(problem: FlowProblem) -> pd.DataFrame:
    """One-row table of the DOF decomposition #global = #free facets + #free vertices."""
    return pd.DataFrame([build_dof_layout(problem).summary()])


def benchmark_ids() -> List[str]:
    return sorted(BENCHMARKS)


def describe(case: BenchmarkCase) -> Dict[str, Any]:
    """Flat summary of a case, one entry per CSV column."""
    layout = build_dof_layout(case.flow_problem)
    row: Dict[str, Any] = {"benchmark": case.id, "level": case.level, "fitted": case.fitted}
    row.update(layout.summary())
    row["blocking_fractures"] = len(case.network.blocking)
    row["conductive_fractures"] = len(case.network.conductive)
    return row


def fracture_ratios(case: BenchmarkCase) -> Sequence[float]:
    """K_c / K_m for conductive and eps / K_b for blocking fractures."""
    k_m = float(case.mesh.permeability[0, 0, 0])
    return [
        f.conductivity / k_m if f.is_conductive else f.thickness / f.conductivity
        for f in case.network
    ]
