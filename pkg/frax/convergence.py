"""
Refinement studies against a finer reference solution.

Errors are L2 norms over the reference mesh: each level's solution is
evaluated at the reference quadrature points by point location, which is an
exact restriction when the meshes are nested.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .benchmarks import BenchmarkCase, build_benchmark
from .exceptions import ConfigError, PointOutsideDomain
from .fields import CellField
from .flow import DEFAULT_PENALTY, FlowSolution, evaluate_velocity, solve_flow
from .mesh import SimplicialMesh
from .transport import TransportProblem, run_transport

logger = logging.getLogger(__name__)

_QUADRATURE = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])

TransportFactory = Callable[[int], TransportProblem]


@dataclass(frozen=True, eq=False)
class _LevelResult:
    case: BenchmarkCase
    flow: FlowSolution
    concentration: Optional[np.ndarray]


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    """Per-level sizes, L2 errors and observed rates.

    ``table`` has one row per level with the columns ``level``, ``cells``,
    ``dofs``, ``velocity_error``, ``pressure_error``,
    ``concentration_error`` and a ``*_rate`` column per error; the rate of
    the first level is NaN.
    """

    benchmark: str
    reference_level: int
    table: pd.DataFrame

    def rates(self, quantity: str) -> np.ndarray:
        return self.table[f"{quantity}_rate"].to_numpy()[1:]

    def errors(self, quantity: str) -> np.ndarray:
        return self.table[f"{quantity}_error"].to_numpy()


def quadrature_points(mesh: SimplicialMesh) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Three interior points per cell and their weights."""
    corners = mesh.vertices[mesh.cells]
    points = np.einsum("qj,mjd->mqd", _QUADRATURE, corners).reshape(-1, 2)
    weights = np.repeat(mesh.areas / 3.0, 3)
    owners = np.repeat(np.arange(mesh.n_cells), 3)
    return points, weights, owners


def _solve_level(
    benchmark_id: str,
    level: int,
    *,
    fitted: bool,
    transport: bool,
    transport_problem: Optional[TransportFactory],
    case_options: Dict[str, Any],
    solver_options: Dict[str, Any],
) -> _LevelResult:
    case = build_benchmark(benchmark_id, level, fitted=fitted, **case_options)
    if transport_problem is not None:
        case.transport_problem = transport_problem(level)
    flow = solve_flow(case.flow_problem, **solver_options)
    concentration = None
    if transport and case.transport_problem is not None:
        source = case.flow_problem.source_values
        concentration = run_transport(flow, case.transport_problem, source=source).state.cell
    return _LevelResult(case, flow, concentration)


def l2_difference(
    values: np.ndarray,
    reference_values: np.ndarray,
    weights: np.ndarray,
) -> float:
    """Weighted L2 norm of the pointwise difference, Euclidean for vector values."""
    diff = np.asarray(values) - np.asarray(reference_values)
    if diff.ndim == 2:
        diff = np.linalg.norm(diff, axis=1)
    return float(np.sqrt((weights * diff**2).sum()))


def run_convergence(
    benchmark_id: str,
    max_level: int,
    reference_level: Optional[int] = None,
    *,
    fitted: bool = True,
    transport: bool = True,
    transport_problem: Optional[TransportFactory] = None,
    subcase: str = "a",
    geometry_path: Optional[Path] = None,
    penalty: float = DEFAULT_PENALTY,
    **solver_options: Any,
) -> ConvergenceReport:
    """Solve on levels 0..max_level and compare with the fitted reference level.

    ``subcase``, ``geometry_path`` and ``penalty`` go to
    :func:`~frax.benchmarks.build_benchmark`. ``transport_problem`` maps a
    level to the transport data used there instead of the benchmark's own;
    the remaining keywords are passed to :func:`~frax.flow.solve_flow`.
    """
    reference_level = max_level + 1 if reference_level is None else reference_level
    if max_level < 0:
        raise ConfigError("max_level must not be negative")
    if reference_level <= max_level:
        raise ConfigError(f"reference level {reference_level} must exceed max_level {max_level}")
    case_options = {"subcase": subcase, "geometry_path": geometry_path, "penalty": penalty}

    reference = _solve_level(
        benchmark_id,
        reference_level,
        fitted=True,
        transport=transport,
        transport_problem=transport_problem,
        case_options=case_options,
        solver_options=solver_options,
    )
    ref_mesh = reference.case.mesh
    points, weights, owners = quadrature_points(ref_mesh)
    ref_velocity = evaluate_velocity(ref_mesh, reference.flow.velocity, owners, points)
    ref_pressure = CellField.from_reconstruction(ref_mesh, reference.flow.reconstruction).evaluate(
        points, cells=owners
    )

    rows: List[Dict[str, Any]] = []
    for level in range(max_level + 1):
        result = _solve_level(
            benchmark_id,
            level,
            fitted=fitted,
            transport=transport,
            transport_problem=transport_problem,
            case_options=case_options,
            solver_options=solver_options,
        )
        mesh = result.case.mesh
        cells = mesh.locate(points)
        if np.any(cells < 0):
            raise PointOutsideDomain(f"level {level} mesh does not cover the reference mesh")
        velocity = evaluate_velocity(mesh, result.flow.velocity, cells, points)
        pressure = CellField.from_reconstruction(mesh, result.flow.reconstruction).evaluate(
            points, cells=cells
        )
        row: Dict[str, Any] = {
            "level": level,
            "cells": mesh.n_cells,
            "dofs": result.flow.layout.n_global,
            "velocity_error": l2_difference(velocity, ref_velocity, weights),
            "pressure_error": l2_difference(pressure, ref_pressure, weights),
            "concentration_error": np.nan,
        }
        if result.concentration is not None and reference.concentration is not None:
            row["concentration_error"] = l2_difference(
                result.concentration[cells],
                reference.concentration[owners],
                weights,
            )
        logger.info(
            "level %d: %d cells, velocity error %.3e, pressure error %.3e",
            level,
            mesh.n_cells,
            row["velocity_error"],
            row["pressure_error"],
        )
        rows.append(row)

    table = pd.DataFrame(rows)
    for quantity in ("velocity", "pressure", "concentration"):
        errors = table[f"{quantity}_error"].to_numpy(dtype=float)
        rates = np.full(len(errors), np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            rates[1:] = np.log2(errors[:-1] / errors[1:])
        table[f"{quantity}_rate"] = rates
    return ConvergenceReport(benchmark_id, reference_level, table)
