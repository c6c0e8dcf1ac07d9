"""
Command-line front end.

    frax solve|transport|bench|mesh --config FILE [--level N] [--benchmark ID] [--out DIR]

Exit status 0 on success, 2 when the run fails with a :class:`FraxError`.
"""

from __future__ import annotations

import argparse
import logging
import sys
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .benchmarks import BenchmarkCase, benchmark_ids, build_benchmark, describe
from .config import MODES, FraxConfig, RunConfig
from .convergence import run_convergence
from .exceptions import FraxError
from .fields import CellField, line_profile
from .flow import FlowProblem, FlowSolution, scheme_residuals, solve_flow, velocity_field
from .geometry import FractureNetwork
from .io import export_fields, read_fractures, read_mesh, write_csv, write_mesh
from .logutil import set_verbosity, setup_logging
from .mesh import check_conforming, extract_fracture_mesh, immerse_network, refine_uniform, tag_fracture_facets
from .transport import LineProfileObserver, MeanConcentration, TotalMass, TransportProblem, run_transport

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frax", description="Flow and transport in 2D fractured porous media.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", type=Path, help="TOML run configuration")
    parser.add_argument("--level", type=int, help="refinement level (max level in bench mode)")
    parser.add_argument("--benchmark", choices=benchmark_ids())
    parser.add_argument("--out", type=Path, help="output directory")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    config = FraxConfig(args.config)
    config.override("flow", "benchmark", args.benchmark)
    if args.level is not None:
        config.override("flow", "max_level" if args.mode == "bench" else "level", args.level)
    if args.out is not None:
        config.override("output", "directory", str(args.out))
    return config.run_config(args.mode)


def _file_case(run: RunConfig) -> BenchmarkCase:
    """Problem from mesh and fracture files with constant data."""
    assert run.mesh_path is not None
    mesh = read_mesh(run.mesh_path, permeability=run.permeability)
    fractures = read_fractures(run.fractures_path) if run.fractures_path else []
    network = FractureNetwork(fractures, mesh.boundary_polygon())
    if all(check_conforming(mesh, network[i], network.tol) for i in network.conductive):
        mesh = tag_fracture_facets(mesh, network)
    else:
        mesh = immerse_network(mesh, network)
    for _ in range(run.level):
        mesh = refine_uniform(mesh)
    fracture_mesh = extract_fracture_mesh(mesh, network)
    problem = FlowProblem(
        mesh,
        fracture_mesh,
        blocking=[network[i] for i in network.blocking],
        source=run.source,
        dirichlet=run.dirichlet,
        neumann=run.neumann,
        penalty=run.penalty,
        tol_geo=network.tol,
    )
    transport = TransportProblem(
        porosity=run.porosity,
        fracture_porosity=run.fracture_porosity,
        initial=run.initial,
        inflow=run.inflow,
        time_step=run.time_step,
        final_time=run.final_time,
    )
    return BenchmarkCase(
        id=run.mesh_path.stem,
        level=run.level,
        network=network,
        mesh=mesh,
        fracture_mesh=fracture_mesh,
        flow_problem=problem,
        transport_problem=transport,
    )


def transport_problem(run: RunConfig, level: int) -> TransportProblem:
    """Configured transport data on a benchmark level."""
    # level l runs with 2^-l times the configured step
    return TransportProblem(
        porosity=run.porosity,
        fracture_porosity=run.fracture_porosity,
        initial=run.initial,
        inflow=run.inflow,
        time_step=run.time_step * 2.0**-level,
        final_time=run.final_time,
    )


def build_case(run: RunConfig) -> BenchmarkCase:
    if not run.benchmark:
        return _file_case(run)
    case = build_benchmark(
        run.benchmark,
        run.level,
        fitted=run.fitted,
        subcase=run.subcase,
        geometry_path=run.geometry_path,
        penalty=run.penalty,
    )
    case.transport_problem = transport_problem(run, run.level)
    return case


def _solver_options(run: RunConfig) -> Dict[str, Any]:
    return {
        "solver": run.solver,
        "ordering": run.ordering,
        "tolerance": run.tolerance,
        "max_iterations": run.max_iterations,
        "preconditioner": None if run.preconditioner == "none" else run.preconditioner,
        "workers": run.workers,
    }


def _summary(case: BenchmarkCase, flow: FlowSolution) -> pd.DataFrame:
    row = describe(case)
    if flow.report is not None:
        row.update(
            {
                "solver": flow.report.method,
                "iterations": flow.report.iterations,
                "solver_residual": flow.report.residual,
            }
        )
    for name, value in scheme_residuals(case.flow_problem, flow).items():
        row[f"residual_{name}"] = value
    return pd.DataFrame([row])


def _write_profiles(run: RunConfig, case: BenchmarkCase, field: CellField) -> None:
    if not run.write_profiles:
        return
    for name, (p0, p1) in case.lines.items():
        write_csv(line_profile(field, p0, p1, run.samples), run.output_directory / f"profile_{name}.csv")


def _cell_fields(flow: FlowSolution) -> Dict[str, np.ndarray]:
    a, b = velocity_field(flow.mesh, flow.velocity)
    u = a + b[:, None] * flow.mesh.centroids
    return {
        "pressure": flow.pressure,
        "postprocessed_pressure": flow.reconstruction[:, 0],
        "velocity_magnitude": np.linalg.norm(u, axis=1),
    }


def run_solve(run: RunConfig) -> None:
    case = build_case(run)
    flow = solve_flow(case.flow_problem, **_solver_options(run))
    write_csv(_summary(case, flow), run.output_directory / "summary.csv")
    _write_profiles(run, case, CellField.from_reconstruction(case.mesh, flow.reconstruction))
    if run.write_vtk:
        export_fields(case.mesh, _cell_fields(flow), run.output_directory / "fields.vtk")


def run_transport_mode(run: RunConfig) -> None:
    """Solve flow, then run transport with the configured observers."""
    case = build_case(run)
    flow = solve_flow(case.flow_problem, **_solver_options(run))
    write_csv(_summary(case, flow), run.output_directory / "summary.csv")
    fields = _cell_fields(flow)
    if run.transport:
        assert case.transport_problem is not None
        profiles = [LineProfileObserver(p0, p1, run.samples, name=name) for name, (p0, p1) in case.lines.items()]
        box = (*case.mesh.vertices.min(axis=0), *case.mesh.vertices.max(axis=0))
        observers: List[Any] = [TotalMass(), MeanConcentration(box)]
        result = run_transport(
            flow,
            case.transport_problem,
            observers=observers + profiles,
            source=case.flow_problem.source_values,
        )
        write_csv(result.history, run.output_directory / "transport.csv")
        if run.write_profiles:
            for observer in profiles:
                for frame in observer.profiles.values():
                    write_csv(frame, run.output_directory / f"profile_{observer.name}.csv")
        fields["concentration"] = result.state.cell
    if run.write_vtk:
        export_fields(case.mesh, fields, run.output_directory / "fields.vtk")


def run_bench(run: RunConfig) -> None:
    """Run the convergence study and write ``convergence.csv``."""
    report = run_convergence(
        run.benchmark,
        run.max_level,
        run.effective_reference_level,
        fitted=run.fitted,
        transport=run.transport,
        transport_problem=partial(transport_problem, run),
        subcase=run.subcase,
        geometry_path=run.geometry_path,
        penalty=run.penalty,
        **_solver_options(run),
    )
    write_csv(report.table, run.output_directory / "convergence.csv")


def run_mesh(run: RunConfig) -> None:
    case = build_case(run)
    write_mesh(case.mesh, run.output_directory / "mesh.txt")
    write_csv(pd.DataFrame([describe(case)]), run.output_directory / "summary.csv")


DRIVERS = {
    "solve": run_solve,
    "transport": run_transport_mode,
    "bench": run_bench,
    "mesh": run_mesh,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)
    setup_logging()
    if args.verbose:
        set_verbosity("debug")
    elif args.quiet:
        set_verbosity("warning")
    try:
        run = load_run_config(args)
        logger.info("frax %s: %s", run.mode, run.benchmark or run.mesh_path)
        DRIVERS[run.mode](run)
    except FraxError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
