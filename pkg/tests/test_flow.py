import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from frax.benchmarks import build_benchmark
from frax.exceptions import InvalidProblem, NoDirichlet, SingularTensor
from frax.flow import (
    FlowProblem,
    assemble_cell,
    assemble_cells,
    assemble_fracture_segment,
    build_dof_layout,
    clip_blocking,
    condense,
    local_mass_residual,
    postprocess_pressure,
    scheme_residuals,
    solve_flow,
    velocity_field,
    vertex_flux_balance,
)
from frax.geometry import DomainBoundary, Fracture, FractureKind, PointClass
from frax.linsolve import SparseCholesky, is_symmetric
from frax.mesh import BoundaryTag, rectangle_mesh
from tests.conftest import linear_pressure, unit_square_mesh


def rt0_mass_matrix(mesh, cell):
    """RT0 mass matrix of one cell by the edge-midpoint rule."""
    corners = mesh.vertices[mesh.cells[cell]]
    e1, e2 = corners[1] - corners[0], corners[2] - corners[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    lengths = [np.linalg.norm(corners[(i + 1) % 3] - corners[(i + 2) % 3]) for i in range(3)]
    signs = mesh.facet_signs[cell]
    k_inv = np.linalg.inv(mesh.permeability[cell])
    matrix = np.zeros((3, 3))
    for i in range(3):
        point = 0.5 * (corners[i] + corners[(i + 1) % 3])
        basis = [signs[j] * lengths[j] * (point - corners[j]) / (2.0 * area) for j in range(3)]
        for j in range(3):
            for k in range(3):
                matrix[j, k] += area / 3.0 * basis[j] @ k_inv @ basis[k]
    return matrix


def random_spd_problem(seed):
    """Jiggled 3 x 3 grid with random SPD tensors and random linear Dirichlet data."""
    rng = np.random.default_rng(seed)
    boundary = DomainBoundary.rectangle(0.0, 0.0, 1.0, 1.0, tags=("D", "N", "D", "N"))

    def jiggle(points):
        interior = np.all((points > 1e-12) & (points < 1.0 - 1e-12), axis=1)
        shifted = points.copy()
        shifted[interior] += rng.uniform(-0.05, 0.05, size=(int(interior.sum()), 2))
        return shifted

    grid = np.linspace(0.0, 1.0, 4)
    n_cells = 18
    angles = rng.uniform(0.0, np.pi, n_cells)
    rotations = np.stack([[np.cos(angles), -np.sin(angles)], [np.sin(angles), np.cos(angles)]]).transpose(2, 0, 1)
    eigen = rng.uniform(0.5, 5.0, size=(n_cells, 2))
    tensors = np.einsum("mij,mj,mkj->mik", rotations, eigen, rotations)
    mesh = rectangle_mesh(grid, grid, boundary=boundary, permeability=tensors, mapping=jiggle)
    gradient = rng.normal(size=2)
    return FlowProblem(mesh, source=rng.normal(), dirichlet=lambda points: points @ gradient)


def right_outflow(problem, solution):
    mesh = problem.mesh
    facets = mesh.boundary_facets
    facets = facets[np.isclose(mesh.facet_midpoints[facets, 0], 1.0)]
    owners = mesh.facet_cells[facets, 0]
    local = np.argmax(mesh.cell_facets[owners] == facets[:, None], axis=1)
    return solution.fluxes[owners, local].sum()


class TestFlowProblem:
    """Test cases for flow problem validation."""

    def test_non_positive_penalty(self, square_mesh):
        """Test that the endpoint penalty must be positive."""
        with pytest.raises(InvalidProblem):
            FlowProblem(square_mesh, penalty=0.0)

    def test_indefinite_tensor(self, square_mesh):
        """Test that an indefinite permeability names the cell."""
        K = np.repeat(np.eye(2)[None], square_mesh.n_cells, axis=0)
        K[3] = [[1.0, 0.0], [0.0, -1.0]]
        with pytest.raises(SingularTensor):
            FlowProblem(square_mesh.with_permeability(K))

    def test_conductive_in_blocking_list(self, square_mesh):
        """Test that only blocking fractures are accepted as barriers."""
        with pytest.raises(InvalidProblem):
            FlowProblem(square_mesh, blocking=[Fracture((0.5, 0), (0.5, 1), 1e-3)])

    def test_no_dirichlet(self):
        """Test that a pure Neumann problem is rejected."""
        problem = FlowProblem(unit_square_mesh(2, tags=("N", "N", "N", "N")))
        with pytest.raises(NoDirichlet):
            build_dof_layout(problem)

    def test_unknown_solver(self, linear_problem):
        """Test that an unknown solver name is rejected."""
        with pytest.raises(InvalidProblem):
            solve_flow(linear_problem, solver="gmres")


class TestLinearPressure:
    """Test cases for the exactly reproduced linear pressure."""

    @pytest.mark.parametrize("n", [1, 4, 16])
    def test_uniform_velocity(self, n):
        """Test that p = 1 - x gives u = (1, 0) on every cell."""
        problem = FlowProblem(unit_square_mesh(n), dirichlet=linear_pressure)
        solution = solve_flow(problem)
        a, b = velocity_field(problem.mesh, solution.velocity)
        u = a + b[:, None] * problem.mesh.centroids

        assert np.allclose(u, [1.0, 0.0], atol=1e-9)
        assert np.allclose(b, 0.0, atol=1e-9)

    def test_pressures(self, linear_problem):
        """Test cell, facet and postprocessed pressures of p = 1 - x."""
        solution = solve_flow(linear_problem)
        mesh = linear_problem.mesh

        assert np.allclose(solution.pressure, 1.0 - mesh.centroids[:, 0], atol=1e-10)
        assert np.allclose(solution.facet_pressure, 1.0 - mesh.facet_midpoints[:, 0], atol=1e-10)
        assert np.allclose(solution.reconstruction[:, 1], -1.0, atol=1e-9)
        assert np.allclose(solution.reconstruction[:, 2], 0.0, atol=1e-9)

    def test_anisotropic(self):
        """Test that a diagonal tensor scales the velocity."""
        mesh = unit_square_mesh(4, permeability=np.diag([3.0, 0.5]))
        solution = solve_flow(FlowProblem(mesh, dirichlet=linear_pressure))
        a, b = velocity_field(mesh, solution.velocity)

        assert np.allclose(a + b[:, None] * mesh.centroids, [3.0, 0.0], atol=1e-9)

    def test_cg_matches_cholesky(self, linear_problem):
        """Test that both solvers give the same skeleton pressures."""
        direct = solve_flow(linear_problem)
        iterative = solve_flow(linear_problem, solver="cg", tolerance=1e-12)

        assert np.allclose(direct.skeleton(), iterative.skeleton(), atol=1e-9)
        assert iterative.report.method == "cg"

    def test_scheme_residuals(self, linear_problem):
        """Test that all discrete equations hold."""
        residuals = scheme_residuals(linear_problem, solve_flow(linear_problem))

        assert set(residuals) == {"darcy", "mass", "facet_balance", "fracture_darcy", "vertex_balance"}
        assert max(residuals.values()) <= 1e-9

    def test_neumann_inflow(self):
        """Test a prescribed inflow on the left against outflow on the right."""
        mesh = unit_square_mesh(4, tags=("N", "D", "N", "N"))
        neumann = lambda points: np.where(points[:, 0] < 1e-12, -1.0, 0.0)  # noqa: E731
        problem = FlowProblem(mesh, dirichlet=0.0, neumann=neumann)
        solution = solve_flow(problem)

        assert right_outflow(problem, solution) == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(solution.pressure, 1.0 - mesh.centroids[:, 0], atol=1e-10)


class TestCondensation:
    """Test cases for the condensed skeleton system."""

    def test_local_matrices(self, square_mesh):
        """Test that the local Darcy blocks are symmetric positive definite."""
        cells = assemble_cells(FlowProblem(square_mesh, dirichlet=0.0))

        assert np.allclose(cells.A, cells.A.transpose(0, 2, 1))
        assert np.all(np.linalg.eigvalsh(cells.A) > 0)

    def test_workers(self, square_mesh):
        """Test that threaded assembly gives the same blocks."""
        problem = FlowProblem(square_mesh, dirichlet=0.0)

        assert np.allclose(assemble_cells(problem).A, assemble_cells(problem, workers=3).A)

    def test_symmetric_positive_definite(self):
        """Test that the fractured benchmark system is SPD."""
        case = build_benchmark("regular2d-conductive")
        system = condense(case.flow_problem)

        assert is_symmetric(system.matrix)
        SparseCholesky(system.matrix)

    def test_zero_data(self):
        """Test that zero data gives zero fields from a factored system."""
        case = build_benchmark("regular2d-conductive")
        problem = FlowProblem(case.mesh, case.fracture_mesh)
        solution = solve_flow(problem)

        assert solution.report.method in ("cholmod", "superlu-rcm")

        assert np.abs(solution.skeleton()).max() <= 1e-12
        assert np.abs(solution.velocity).max() <= 1e-12
        assert np.abs(solution.fracture_velocity).max() <= 1e-12


class TestFractures:
    """Test cases for flow with conductive and blocking fractures."""

    def test_regular_network_conservation(self):
        """Test local conservation in cells and at skeleton vertices."""
        case = build_benchmark("regular2d-conductive")
        solution = solve_flow(case.flow_problem)
        scale = np.abs(solution.fluxes).max()
        balance = vertex_flux_balance(solution)[~solution.layout.dirichlet_vertices]

        assert np.abs(local_mass_residual(case.flow_problem, solution)).max() <= 1e-10 * scale
        assert np.abs(balance).max() <= 1e-9 * np.abs(solution.fracture_velocity).max()
        assert max(scheme_residuals(case.flow_problem, solution).values()) <= 1e-8

    def test_fracture_carries_flow(self):
        """Test that the horizontal fracture carries flow towards the outlet."""
        case = build_benchmark("regular2d-conductive")
        solution = solve_flow(case.flow_problem)
        fmesh = case.fracture_mesh
        horizontal = fmesh.fracture_ids == 0

        assert solution.fracture_velocity[horizontal].sum() > 0

    def test_fitted_blocking_series_resistance(self):
        """Test the flux through a fitted barrier against two resistances in series."""
        mesh = unit_square_mesh(4)
        barrier = Fracture((0.5, 0.0), (0.5, 1.0), 1e-4, FractureKind.BLOCKING, 1e-4)
        problem = FlowProblem(mesh, blocking=[barrier], dirichlet=linear_pressure)
        solution = solve_flow(problem)
        a, b = velocity_field(mesh, solution.velocity)

        assert right_outflow(problem, solution) == pytest.approx(0.5, abs=1e-10)
        assert np.allclose(a + b[:, None] * mesh.centroids, [0.5, 0.0], atol=1e-9)

    def test_unfitted_blocking_reduces_flux(self):
        """Test that a barrier crossing cells still throttles the flow."""
        mesh = unit_square_mesh(5)
        barrier = Fracture((0.5, 0.0), (0.5, 1.0), 1e-4, FractureKind.BLOCKING, 1e-4)
        problem = FlowProblem(mesh, blocking=[barrier], dirichlet=linear_pressure)
        solution = solve_flow(problem)

        assert 0.0 < right_outflow(problem, solution) < 1.0
        assert np.abs(local_mass_residual(problem, solution)).max() <= 1e-10

    def test_clip_blocking_pieces(self):
        """Test that clipped pieces cover the barrier once."""
        mesh = unit_square_mesh(5)
        barrier = Fracture((0.5, 0.0), (0.5, 1.0), 1e-4, FractureKind.BLOCKING, 1e-4)
        pieces = clip_blocking(mesh, [barrier])
        lengths = np.linalg.norm(pieces.ends - pieces.starts, axis=1)

        assert lengths.sum() == pytest.approx(1.0)
        assert np.allclose(pieces.resistance, 1.0)

    def test_clip_fitted_barrier_once(self):
        """Test that a barrier on facets is assigned to one side only."""
        pieces = clip_blocking(unit_square_mesh(4), [Fracture((0.5, 0.0), (0.5, 1.0), 1e-4, "B", 1e-4)])
        lengths = np.linalg.norm(pieces.ends - pieces.starts, axis=1)

        assert len(pieces) == 4
        assert lengths.sum() == pytest.approx(1.0)

    def test_dof_layout(self):
        """Test the DOF decomposition of the fitted regular network."""
        case = build_benchmark("regular2d-conductive")
        layout = build_dof_layout(case.flow_problem)
        summary = layout.summary()

        assert summary["cells"] == 1352
        assert summary["segments"] == 90
        assert summary["skeleton_vertices"] == 87
        assert summary["free_facet_pressures"] == 2080 - 26
        assert summary["free_vertex_pressures"] == 85
        assert summary["global"] == summary["free_facet_pressures"] + summary["free_vertex_pressures"]
        assert (case.mesh.boundary_tags == BoundaryTag.DIRICHLET).sum() == 26


SEGMENT_MASS = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])


class TestLocalSystems:
    """Test cases for single-cell and single-segment local systems."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_cell_mass_matrix(self, seed):
        """Test the local Darcy block against an edge-midpoint RT0 mass matrix."""
        problem = random_spd_problem(seed)
        mesh = problem.mesh
        for cell in range(mesh.n_cells):
            local = assemble_cell(cell, problem)
            lengths = mesh.facet_lengths[mesh.cell_facets[cell]]

            assert np.allclose(local.A[0], rt0_mass_matrix(mesh, cell), rtol=1e-12, atol=1e-14)
            assert np.allclose(local.B[0], mesh.facet_signs[cell] * lengths)
            assert local.F[0] == pytest.approx(problem.source_values[cell] * mesh.areas[cell])

    def test_blocking_term(self):
        """Test the barrier contribution against a Simpson-rule outer product."""
        mesh = unit_square_mesh(4)
        barrier = Fracture((0.55, 0.0), (0.55, 1.0), 2e-4, FractureKind.BLOCKING, 1e-4)
        plain = FlowProblem(mesh, dirichlet=linear_pressure)
        blocked = FlowProblem(mesh, blocking=[barrier], dirichlet=linear_pressure)
        pieces = clip_blocking(mesh, [barrier])

        assert len(np.unique(pieces.cells)) == 8
        for cell in np.unique(pieces.cells):
            corners = mesh.vertices[mesh.cells[cell]]
            lengths = mesh.facet_lengths[mesh.cell_facets[cell]]
            scale = mesh.facet_signs[cell] * lengths / (2.0 * mesh.areas[cell])
            expected = np.zeros((3, 3))
            mine = pieces.cells == cell
            for start, end in zip(pieces.starts[mine], pieces.ends[mine]):
                length = np.linalg.norm(end - start)
                for weight, point in ((1 / 6, start), (4 / 6, 0.5 * (start + end)), (1 / 6, end)):
                    flux = scale * ((point - corners) @ barrier.normal)
                    expected += weight * length * 2.0 * np.outer(flux, flux)
            difference = assemble_cell(cell, blocked).A[0] - assemble_cell(cell, plain).A[0]

            assert np.allclose(difference, expected, rtol=1e-12, atol=1e-12)
            assert np.linalg.matrix_rank(difference, tol=1e-10) == 1

    def test_segment_mass_matrix(self):
        """Test fracture segment matrices against (L / k) [[1/3, 1/6], [1/6, 1/3]]."""
        case = build_benchmark("regular2d-conductive")
        fmesh = case.fracture_mesh
        for segment in range(0, fmesh.n_segments, 7):
            expected = fmesh.lengths[segment] / fmesh.transmissivity[segment] * SEGMENT_MASS
            local = assemble_fracture_segment(segment, case.flow_problem)

            assert np.allclose(local.M[0], expected, rtol=1e-12)

    def test_segment_penalty(self):
        """Test the penalty alpha / (eps K_c) at fracture ends on a barrier."""
        case = build_benchmark("complex2d")
        fmesh = case.fracture_mesh
        blocked = fmesh.vertex_classes[fmesh.segment_vertices] == PointClass.CB
        segment = int(np.flatnonzero(blocked.any(axis=1))[0])
        k = fmesh.transmissivity[segment]
        expected = fmesh.lengths[segment] / k * SEGMENT_MASS + np.diag(np.where(blocked[segment], 1e6 / k, 0.0))

        assert np.allclose(assemble_fracture_segment(segment, case.flow_problem).M[0], expected, rtol=1e-12)

    def test_penalty_unused_without_barrier_ends(self):
        """Test that alpha changes nothing when no fracture ends on a barrier."""
        case = build_benchmark("regular2d-conductive")
        problem = case.flow_problem
        weak = dataclasses.replace(problem, penalty=1.0)

        for segment in (0, case.fracture_mesh.n_segments - 1):
            assert np.array_equal(
                assemble_fracture_segment(segment, weak).M, assemble_fracture_segment(segment, problem).M
            )
        assert np.allclose(solve_flow(weak).skeleton(), solve_flow(problem).skeleton(), rtol=1e-12, atol=1e-14)

    def test_postprocess_pressure(self):
        """Test that the exact velocity and cell means of 1 - x give p* = 1 - x."""
        tensor = np.array([[2.0, 0.5], [0.5, 1.0]])
        mesh = unit_square_mesh(3, permeability=tensor)
        problem = FlowProblem(mesh, dirichlet=linear_pressure)
        velocity = (mesh.facet_normals @ (tensor @ [1.0, 0.0]))[mesh.cell_facets]
        solution = SimpleNamespace(pressure=1.0 - mesh.centroids[:, 0], velocity=velocity)
        reconstruction = postprocess_pressure(problem, solution)

        assert np.allclose(reconstruction[:, 0], 1.0 - mesh.centroids[:, 0], atol=1e-12)
        assert np.allclose(reconstruction[:, 1], -1.0, atol=1e-12)
        assert np.allclose(reconstruction[:, 2], 0.0, atol=1e-12)


class TestRandomProblems:
    """Test cases for randomly generated meshes, tensors and data."""

    @pytest.mark.parametrize("seed", range(20))
    def test_spd_and_conservative(self, seed):
        """Test that the condensed system is SPD and the solution conservative."""
        problem = random_spd_problem(seed)
        system = condense(problem)
        solution = solve_flow(problem)
        scale = max(np.abs(solution.fluxes).max(), np.abs(problem.source_values).max(), 1.0)

        assert is_symmetric(system.matrix)
        assert np.linalg.eigvalsh(system.matrix.toarray()).min() > 0
        assert np.abs(local_mass_residual(problem, solution)).max() <= 1e-10 * scale
        assert max(scheme_residuals(problem, solution).values()) <= 1e-8
