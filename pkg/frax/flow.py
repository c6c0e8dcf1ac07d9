"""
Hybrid-mixed RT0 discretization of Darcy flow with conductive and blocking fractures.

Unknowns per cell: three normal velocity components (one per local facet,
measured in the global facet orientation) and a constant pressure. The
skeleton unknowns are the facet pressures and the pressures at fracture
skeleton vertices. Cell and fracture-segment unknowns are eliminated
locally, leaving an SPD system in the skeleton pressures.

Local basis on a cell K with vertices P_i and facets e_i (e_i opposite P_i):

    phi_i(x) = s_i |e_i| (x - P_i) / (2 |K|)

with s_i = +1 when the global normal of e_i points out of K. Its normal
component is 1 on e_i (global orientation) and 0 on the other facets, so
the divergence and facet-trace couplings are both diag(s_i |e_i|).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InvalidProblem, NoDirichlet, SingularTensor
from .geometry import Fracture, PointClass
from .linsolve import SolveReport, assemble_csr, cg_solve, cholesky_solve
from .mesh import BoundaryTag, FractureMesh, SimplicialMesh

logger = logging.getLogger(__name__)

DEFAULT_PENALTY = 1e6

# Interior 3-point rule, exact for quadratics.
_TRIANGLE_RULE = np.array(
    [[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]
)
_GAUSS_2 = 0.5 * (1.0 + np.array([-1.0, 1.0]) / np.sqrt(3.0))
_SEGMENT_MASS = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
# Maps (p_facet, p_start, p_end) to the fracture Darcy right-hand side.
_SEGMENT_COUPLING = np.array([[-1.0, 1.0, 0.0], [1.0, 0.0, -1.0]])

Data = Any  # scalar, array or callable evaluated at points


def _evaluate(data: Data, points: np.ndarray) -> np.ndarray:
    """Data values at points: callables are evaluated, constants broadcast."""
    if callable(data):
        return np.asarray(data(points), dtype=float).reshape(len(points))
    return np.broadcast_to(np.asarray(data, dtype=float), (len(points),)).copy()


@dataclass(eq=False)
class FlowProblem:
    """Mesh, fractures and data of a flow problem.

    ``dirichlet`` and ``neumann`` are scalars or callables of an (n, 2)
    array of points; ``neumann`` is the outward normal flux. ``source`` is a
    scalar, per-cell array or callable evaluated at cell centroids.
    Boundary facets without a tag are treated as homogeneous Neumann.
    """

    mesh: SimplicialMesh
    fracture_mesh: FractureMesh = field(default_factory=FractureMesh.empty)
    blocking: Sequence[Fracture] = ()
    source: Data = 0.0
    dirichlet: Data = 0.0
    neumann: Data = 0.0
    penalty: float = DEFAULT_PENALTY
    tol_geo: Optional[float] = None

    def __post_init__(self) -> None:
        self.blocking = tuple(self.blocking)
        if not self.penalty > 0:
            raise InvalidProblem(f"penalty must be positive, got {self.penalty}")
        if self.tol_geo is None:
            self.tol_geo = self.mesh.tol_geo
        K = self.mesh.permeability
        asymmetric = np.abs(K - K.transpose(0, 2, 1)).max(axis=(1, 2)) > 1e-12 * np.abs(K).max(axis=(1, 2))
        eigen = np.linalg.eigvalsh(K)
        bad = np.flatnonzero(asymmetric | (eigen[:, 0] <= 0))
        if len(bad):
            raise SingularTensor(int(bad[0]))
        if np.any(self.fracture_mesh.transmissivity <= 0):
            raise InvalidProblem("fracture transmissivity must be positive")
        for fracture in self.blocking:
            if not fracture.is_blocking:
                raise InvalidProblem("only blocking fractures go into FlowProblem.blocking")
        untagged = (self.mesh.boundary_tags[self.mesh.boundary_facets] == BoundaryTag.NONE).sum()
        if untagged:
            logger.warning("%d untagged boundary facets treated as no-flow", int(untagged))

    @property
    def source_values(self) -> np.ndarray:
        """Source density per cell."""
        if callable(self.source):
            return _evaluate(self.source, self.mesh.centroids)
        return np.broadcast_to(np.asarray(self.source, dtype=float), (self.mesh.n_cells,)).copy()


@dataclass(frozen=True, eq=False)
class DofLayout:
    """Numbering of the skeleton unknowns: facet pressures first, then skeleton vertices."""

    n_cells: int
    n_facets: int
    n_segments: int
    n_skeleton_vertices: int
    dirichlet_facets: np.ndarray
    dirichlet_vertices: np.ndarray

    @property
    def n_skeleton(self) -> int:
        return self.n_facets + self.n_skeleton_vertices

    @property
    def fixed(self) -> np.ndarray:
        return np.concatenate([self.dirichlet_facets, self.dirichlet_vertices])

    @property
    def free(self) -> np.ndarray:
        return ~self.fixed

    @property
    def n_free_facets(self) -> int:
        return int((~self.dirichlet_facets).sum())

    @property
    def n_free_vertices(self) -> int:
        return int((~self.dirichlet_vertices).sum())

    @property
    def n_global(self) -> int:
        return self.n_free_facets + self.n_free_vertices

    @property
    def n_velocity(self) -> int:
        return 3 * self.n_cells

    @property
    def n_fracture_velocity(self) -> int:
        return 2 * self.n_segments

    def summary(self) -> Dict[str, int]:
        """Sizes keyed by name, as logged and reported."""
        return {
            "cells": self.n_cells,
            "facets": self.n_facets,
            "segments": self.n_segments,
            "skeleton_vertices": self.n_skeleton_vertices,
            "free_facet_pressures": self.n_free_facets,
            "free_vertex_pressures": self.n_free_vertices,
            "global": self.n_global,
        }


def build_dof_layout(problem: FlowProblem) -> DofLayout:
    """Number the skeleton unknowns and mark the Dirichlet ones."""
    mesh, fmesh = problem.mesh, problem.fracture_mesh
    dirichlet_facets = mesh.boundary_tags == BoundaryTag.DIRICHLET
    dirichlet_vertices = fmesh.vertex_classes == PointClass.CM_D
    if not dirichlet_facets.any() and not dirichlet_vertices.any():
        raise NoDirichlet("the problem has no Dirichlet boundary")
    return DofLayout(
        n_cells=mesh.n_cells,
        n_facets=mesh.n_facets,
        n_segments=fmesh.n_segments,
        n_skeleton_vertices=fmesh.n_vertices,
        dirichlet_facets=dirichlet_facets,
        dirichlet_vertices=np.asarray(dirichlet_vertices, dtype=bool),
    )


@dataclass(frozen=True, eq=False)
class BlockingPieces:
    """Pieces of blocking fractures clipped to cells."""

    cells: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    normals: np.ndarray
    resistance: np.ndarray

    def __len__(self) -> int:
        return len(self.cells)


def clip_blocking(
    mesh: SimplicialMesh, fractures: Sequence[Fracture], tol: Optional[float] = None
) -> BlockingPieces:
    """Clip blocking fractures against the cells they cross.

    A piece lying on a facet shared by two cells is kept for the facet's
    first incident cell only.
    """
    tol = mesh.tol_geo if tol is None else tol
    parts: List[Tuple[np.ndarray, ...]] = []
    corners = mesh.vertices[mesh.cells]
    low, high = corners.min(axis=1), corners.max(axis=1)
    for fracture in fractures:
        a, b = fracture.a, fracture.b
        box_low, box_high = np.minimum(a, b) - tol, np.maximum(a, b) + tol
        cand = np.flatnonzero(np.all((low <= box_high) & (high >= box_low), axis=1))
        if len(cand) == 0:
            continue
        v = corners[cand]
        edge = np.roll(v, -1, axis=1) - v
        inward = np.stack([-edge[..., 1], edge[..., 0]], axis=2)
        inward /= np.linalg.norm(inward, axis=2, keepdims=True)
        alpha = ((a - v) * inward).sum(axis=2)
        beta = ((b - a) * inward).sum(axis=2)
        eps = 1e-14 * fracture.length
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = -alpha / beta
        lo = np.where(beta > eps, ratio, -np.inf).max(axis=1)
        hi = np.where(beta < -eps, ratio, np.inf).min(axis=1)
        outside = ((np.abs(beta) <= eps) & (alpha < -tol)).any(axis=1)
        t0, t1 = np.maximum(lo, 0.0), np.minimum(hi, 1.0)
        keep = ~outside & ((t1 - t0) * fracture.length > tol)

        on_edge = (np.abs(alpha) <= tol) & (np.abs(alpha + beta) <= tol)
        for row in np.flatnonzero(keep & on_edge.any(axis=1)):
            j = int(np.flatnonzero(on_edge[row])[0])
            cell = cand[row]
            facet = mesh.cell_facets[cell, (j + 2) % 3]
            if mesh.facet_cells[facet, 0] != cell:
                keep[row] = False
        if not keep.any():
            continue
        n = int(keep.sum())
        parts.append(
            (
                cand[keep],
                fracture.point_at(t0[keep]),
                fracture.point_at(t1[keep]),
                np.broadcast_to(fracture.normal, (n, 2)),
                np.full(n, fracture.resistance),
            )
        )
    if not parts:
        empty = np.zeros((0, 2))
        return BlockingPieces(np.zeros(0, dtype=np.int64), empty, empty, empty, np.zeros(0))
    cells, starts, ends, normals, resistance = (np.concatenate(p) for p in zip(*parts))
    logger.debug("blocking fractures clipped into %d pieces", len(cells))
    return BlockingPieces(cells, starts, ends, normals, resistance)


def _basis_scale(mesh: SimplicialMesh, ids: Any = slice(None)) -> np.ndarray:
    """s_i |e_i| / (2 |K|) per cell and local facet."""
    lengths = mesh.facet_lengths[mesh.cell_facets[ids]]
    return mesh.facet_signs[ids] * lengths / (2.0 * mesh.areas[ids][:, None])


@dataclass(frozen=True, eq=False)
class LocalCellSystem:
    """Local Darcy matrices A (n, 3, 3), divergence rows B (n, 3), loads F (n,)."""

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray

    def __getitem__(self, ids: Any) -> "LocalCellSystem":
        return LocalCellSystem(self.A[ids], self.B[ids], self.F[ids])


def _darcy_block(mesh: SimplicialMesh, ids: np.ndarray) -> np.ndarray:
    """RT0 mass matrices (K^-1 phi_i, phi_j) of the cells ``ids``."""
    corners = mesh.vertices[mesh.cells[ids]]
    scale = _basis_scale(mesh, ids)
    k_inv = np.linalg.inv(mesh.permeability[ids])
    points = np.einsum("qj,mjd->mqd", _TRIANGLE_RULE, corners)
    rel = points[:, :, None, :] - corners[:, None, :, :]
    A = np.einsum("mqid,mde,mqje->mij", rel, k_inv, rel)
    return A * (mesh.areas[ids] / 3.0)[:, None, None] * scale[:, :, None] * scale[:, None, :]


def _blocking_block(mesh: SimplicialMesh, pieces: BlockingPieces) -> np.ndarray:
    """Normal-resistance contributions, one 3x3 block per piece."""
    cells = pieces.cells
    scale = _basis_scale(mesh, cells)
    corners = mesh.vertices[mesh.cells[cells]]
    length = np.linalg.norm(pieces.ends - pieces.starts, axis=1)
    block = np.zeros((len(cells), 3, 3))
    for s in _GAUSS_2:
        x = pieces.starts + s * (pieces.ends - pieces.starts)
        flux = scale * ((x[:, None, :] - corners) * pieces.normals[:, None, :]).sum(axis=2)
        block += (0.5 * length * pieces.resistance)[:, None, None] * flux[:, :, None] * flux[:, None, :]
    return block


def assemble_cells(problem: FlowProblem, workers: int = 1) -> LocalCellSystem:
    """Local systems of all cells.

    With ``workers > 1`` the Darcy blocks are computed on a thread pool in
    contiguous chunks; the result is identical to the serial run.
    """
    mesh = problem.mesh
    ids = np.arange(mesh.n_cells)
    if workers > 1 and mesh.n_cells > 4 * workers:
        chunks = np.array_split(ids, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            A = np.concatenate(list(pool.map(lambda c: _darcy_block(mesh, c), chunks)))
    else:
        A = _darcy_block(mesh, ids)
    if problem.blocking:
        pieces = clip_blocking(mesh, problem.blocking, problem.tol_geo)
        if len(pieces):
            np.add.at(A, pieces.cells, _blocking_block(mesh, pieces))
    B = mesh.facet_signs * mesh.facet_lengths[mesh.cell_facets]
    F = problem.source_values * mesh.areas
    return LocalCellSystem(A, B, F)


def assemble_cell(cell: int, problem: FlowProblem) -> LocalCellSystem:
    """Local system of one cell, blocking pieces included."""
    mesh = problem.mesh
    ids = np.array([cell])
    A = _darcy_block(mesh, ids)
    if problem.blocking:
        pieces = clip_blocking(mesh, problem.blocking, problem.tol_geo)
        mine = pieces.cells == cell
        if mine.any():
            sub = BlockingPieces(
                pieces.cells[mine],
                pieces.starts[mine],
                pieces.ends[mine],
                pieces.normals[mine],
                pieces.resistance[mine],
            )
            A[0] += _blocking_block(mesh, sub).sum(axis=0)
    B = (mesh.facet_signs[ids] * mesh.facet_lengths[mesh.cell_facets[ids]])
    F = problem.source_values[ids] * mesh.areas[ids]
    return LocalCellSystem(A, B, F)


@dataclass(frozen=True, eq=False)
class LocalSegmentSystem:
    """Fracture segment mass matrices (n, 2, 2), penalty included."""

    M: np.ndarray

    @property
    def coupling(self) -> np.ndarray:
        """Divergence coupling of the two endpoint fluxes."""
        return _SEGMENT_COUPLING


def assemble_segments(problem: FlowProblem) -> LocalSegmentSystem:
    """Mass matrices of all fracture segments, CB penalty included."""
    fmesh = problem.fracture_mesh
    k = fmesh.transmissivity
    M = (fmesh.lengths / k)[:, None, None] * _SEGMENT_MASS[None]
    blocked = fmesh.vertex_classes[fmesh.segment_vertices] == PointClass.CB
    for end in (0, 1):
        M[:, end, end] += np.where(blocked[:, end], problem.penalty / k, 0.0)
    return LocalSegmentSystem(M)


def assemble_fracture_segment(segment: int, problem: FlowProblem) -> LocalSegmentSystem:
    """Mass matrix of one fracture segment, CB penalty included."""
    return LocalSegmentSystem(assemble_segments(problem).M[segment : segment + 1])


@dataclass(frozen=True, eq=False)
class CondensedSystem:
    """Skeleton system restricted to the free unknowns, plus what recovery needs."""

    matrix: Any
    rhs: np.ndarray
    layout: DofLayout
    fixed_values: np.ndarray
    cells: LocalCellSystem
    segments: LocalSegmentSystem
    a_inv: np.ndarray
    a_inv_b: np.ndarray
    schur: np.ndarray


def _dirichlet_values(problem: FlowProblem, layout: DofLayout) -> np.ndarray:
    """Skeleton vector holding the Dirichlet data at fixed unknowns, zero elsewhere."""
    values = np.zeros(layout.n_skeleton)
    mesh, fmesh = problem.mesh, problem.fracture_mesh
    facets = np.flatnonzero(layout.dirichlet_facets)
    values[facets] = _evaluate(problem.dirichlet, mesh.facet_midpoints[facets])
    vertices = np.flatnonzero(layout.dirichlet_vertices)
    values[layout.n_facets + vertices] = _evaluate(problem.dirichlet, fmesh.points[vertices])
    return values


def condense(problem: FlowProblem, workers: int = 1) -> CondensedSystem:
    """Eliminate cell and segment unknowns; return the SPD skeleton system."""
    mesh, fmesh = problem.mesh, problem.fracture_mesh
    layout = build_dof_layout(problem)
    cells = assemble_cells(problem, workers)
    segments = assemble_segments(problem)

    a_inv = np.linalg.inv(cells.A)
    a_inv_b = np.einsum("mij,mj->mi", a_inv, cells.B)
    schur = (cells.B * a_inv_b).sum(axis=1)
    H = cells.B[:, :, None] * cells.B[:, None, :] * (
        a_inv - a_inv_b[:, :, None] * a_inv_b[:, None, :] / schur[:, None, None]
    )
    g = cells.B * a_inv_b / schur[:, None]

    n = layout.n_skeleton
    idx = mesh.cell_facets
    rows = [np.repeat(idx, 3, axis=1).ravel()]
    cols = [np.tile(idx, (1, 3)).ravel()]
    vals = [H.ravel()]
    rhs = np.zeros(n)
    np.add.at(rhs, idx.ravel(), (g * cells.F[:, None]).ravel())

    if fmesh.n_segments:
        m_inv = np.linalg.inv(segments.M)
        G = _SEGMENT_COUPLING
        Kseg = np.einsum("ai,mab,bj->mij", G, m_inv, G)
        sidx = np.column_stack([fmesh.facets, layout.n_facets + fmesh.segment_vertices])
        rows.append(np.repeat(sidx, 3, axis=1).ravel())
        cols.append(np.tile(sidx, (1, 3)).ravel())
        vals.append(Kseg.ravel())

    neumann = mesh.boundary_facets
    neumann = neumann[mesh.boundary_tags[neumann] != BoundaryTag.DIRICHLET]
    rhs[neumann] -= _evaluate(problem.neumann, mesh.facet_midpoints[neumann]) * mesh.facet_lengths[neumann]

    full = assemble_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n, n))
    fixed_values = _dirichlet_values(problem, layout)
    free = layout.free
    reduced_rhs = rhs[free] - full[free][:, ~free] @ fixed_values[~free]
    matrix = full[free][:, free].tocsr()
    logger.info(
        "condensed system: %d cells, %d facets, %d segments -> %d unknowns (%d nnz)",
        mesh.n_cells,
        mesh.n_facets,
        fmesh.n_segments,
        matrix.shape[0],
        matrix.nnz,
    )
    return CondensedSystem(
        matrix=matrix,
        rhs=reduced_rhs,
        layout=layout,
        fixed_values=fixed_values,
        cells=cells,
        segments=segments,
        a_inv=a_inv,
        a_inv_b=a_inv_b,
        schur=schur,
    )


@dataclass(eq=False)
class FlowSolution:
    """Discrete flow fields.

    ``velocity[k, i]`` is the normal component on local facet i in the
    global facet orientation; ``fluxes[k, i]`` is the outward flux of cell k
    through that facet. ``fracture_velocity[s]`` holds the tangential values
    at the segment start and end; ``reconstruction[k]`` is the P1 pressure
    as (value at centroid, gradient x, gradient y).
    """

    mesh: SimplicialMesh
    fracture_mesh: FractureMesh
    velocity: np.ndarray
    fluxes: np.ndarray
    pressure: np.ndarray
    facet_pressure: np.ndarray
    fracture_velocity: np.ndarray
    vertex_pressure: np.ndarray
    reconstruction: np.ndarray
    layout: DofLayout
    report: Optional[SolveReport] = None

    @property
    def fracture_fluxes(self) -> np.ndarray:
        """In-plane outward fluxes at the segment start and end."""
        return self.fracture_velocity * np.array([-1.0, 1.0])

    def skeleton(self) -> np.ndarray:
        """Facet then skeleton vertex pressures, in layout order."""
        return np.concatenate([self.facet_pressure, self.vertex_pressure])


def velocity_field(mesh: SimplicialMesh, velocity: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Affine RT0 coefficients: u(x) = a + b x on each cell."""
    weights = velocity * _basis_scale(mesh)
    b = weights.sum(axis=1)
    a = -np.einsum("mi,mid->md", weights, mesh.vertices[mesh.cells])
    return a, b


def evaluate_velocity(mesh: SimplicialMesh, velocity: np.ndarray, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Velocity of cells[i] at points[i]."""
    a, b = velocity_field(mesh, velocity)
    return a[cells] + b[cells][:, None] * points


def postprocess_pressure(problem: FlowProblem, solution: FlowSolution) -> np.ndarray:
    """Local P1 pressure of a solution as rows (value at centroid, gradient x, gradient y)."""
    return _reconstruct(problem.mesh, solution.pressure, solution.velocity)


def _reconstruct(mesh: SimplicialMesh, pressure: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    """Local P1 pressure with cell mean p_K and gradient -mean(K^-1 u).

    This is the closed-form solution of the local Neumann problem
    (grad p*, grad q) = -(K^-1 u, grad q) with mean(p*) = p_K; u is affine,
    so its cell mean is its centroid value.
    """
    a, b = velocity_field(mesh, velocity)
    u_mean = a + b[:, None] * mesh.centroids
    gradient = -np.einsum("mij,mj->mi", np.linalg.inv(mesh.permeability), u_mean)
    return np.column_stack([pressure, gradient])


def recover(problem: FlowProblem, system: CondensedSystem, z_free: np.ndarray) -> FlowSolution:
    """Back-substitute cell and segment unknowns from the skeleton solution."""
    mesh, fmesh = problem.mesh, problem.fracture_mesh
    layout = system.layout
    z = system.fixed_values.copy()
    z[layout.free] = z_free
    facet_pressure = z[: layout.n_facets]
    vertex_pressure = z[layout.n_facets :]

    cells = system.cells
    local = facet_pressure[mesh.cell_facets]
    pressure = (cells.F + (system.a_inv_b * cells.B * local).sum(axis=1)) / system.schur
    rhs = cells.B * (pressure[:, None] - local)
    velocity = np.einsum("mij,mj->mi", system.a_inv, rhs)
    fluxes = cells.B * velocity

    if fmesh.n_segments:
        zs = np.column_stack([facet_pressure[fmesh.facets], vertex_pressure[fmesh.segment_vertices]])
        fracture_velocity = np.linalg.solve(system.segments.M, (zs @ _SEGMENT_COUPLING.T)[..., None])[..., 0]
    else:
        fracture_velocity = np.zeros((0, 2))

    return FlowSolution(
        mesh=mesh,
        fracture_mesh=fmesh,
        velocity=velocity,
        fluxes=fluxes,
        pressure=pressure,
        facet_pressure=facet_pressure,
        fracture_velocity=fracture_velocity,
        vertex_pressure=vertex_pressure,
        reconstruction=_reconstruct(mesh, pressure, velocity),
        layout=layout,
    )


def solve_flow(
    problem: FlowProblem,
    solver: str = "cholesky",
    *,
    ordering: str = "rcm",
    tolerance: float = 1e-10,
    max_iterations: Optional[int] = None,
    preconditioner: Optional[str] = "jacobi",
    workers: int = 1,
) -> FlowSolution:
    """Assemble, condense and solve; the solver report is attached to the solution."""
    system = condense(problem, workers)
    if solver == "cholesky":
        z, report = cholesky_solve(system.matrix, system.rhs, ordering=ordering)
    elif solver == "cg":
        z, report = cg_solve(
            system.matrix,
            system.rhs,
            tol=tolerance,
            max_iter=max_iterations,
            preconditioner=preconditioner,
        )
    else:
        raise InvalidProblem(f"unknown solver {solver!r}")
    solution = recover(problem, system, z)
    solution.report = report
    return solution


def local_mass_residual(problem: FlowProblem, solution: FlowSolution) -> np.ndarray:
    """Outflow minus source per cell; zero up to solver precision."""
    return solution.fluxes.sum(axis=1) - problem.source_values * problem.mesh.areas


def vertex_flux_balance(solution: FlowSolution) -> np.ndarray:
    """Net in-plane flux into each skeleton vertex from its segments."""
    fmesh = solution.fracture_mesh
    balance = np.zeros(fmesh.n_vertices)
    np.add.at(balance, fmesh.segment_vertices.ravel(), solution.fracture_fluxes.ravel())
    return balance


def scheme_residuals(problem: FlowProblem, solution: FlowSolution) -> Dict[str, float]:
    """Relative residuals of the five discrete equations."""
    mesh, fmesh = problem.mesh, problem.fracture_mesh
    cells = assemble_cells(problem)
    local = solution.facet_pressure[mesh.cell_facets]
    darcy = np.einsum("mij,mj->mi", cells.A, solution.velocity) - cells.B * (
        solution.pressure[:, None] - local
    )
    darcy_scale = np.abs(cells.B * solution.pressure[:, None]).max() or 1.0
    mass = local_mass_residual(problem, solution)
    mass_scale = max(np.abs(solution.fluxes).max(), np.abs(cells.F).max(), 1e-300)

    balance = np.zeros(mesh.n_facets)
    np.add.at(balance, mesh.cell_facets.ravel(), -solution.fluxes.ravel())
    if fmesh.n_segments:
        np.add.at(balance, fmesh.facets, solution.fracture_velocity[:, 1] - solution.fracture_velocity[:, 0])
    neumann = mesh.boundary_facets
    neumann = neumann[mesh.boundary_tags[neumann] != BoundaryTag.DIRICHLET]
    balance[neumann] += _evaluate(problem.neumann, mesh.facet_midpoints[neumann]) * mesh.facet_lengths[neumann]
    balance = balance[~solution.layout.dirichlet_facets]

    result = {
        "darcy": float(np.abs(darcy).max() / darcy_scale),
        "mass": float(np.abs(mass).max() / mass_scale),
        "facet_balance": float(np.abs(balance).max() / mass_scale) if len(balance) else 0.0,
        "fracture_darcy": 0.0,
        "vertex_balance": 0.0,
    }
    if fmesh.n_segments:
        segments = assemble_segments(problem)
        zs = np.column_stack(
            [solution.facet_pressure[fmesh.facets], solution.vertex_pressure[fmesh.segment_vertices]]
        )
        lhs = np.einsum("mij,mj->mi", segments.M, solution.fracture_velocity)
        fracture_darcy = lhs - zs @ _SEGMENT_COUPLING.T
        scale = np.abs(zs @ _SEGMENT_COUPLING.T).max() or 1.0
        vertex = vertex_flux_balance(solution)[~solution.layout.dirichlet_vertices]
        flux_scale = np.abs(solution.fracture_velocity).max() or 1.0
        result["fracture_darcy"] = float(np.abs(fracture_darcy).max() / scale)
        result["vertex_balance"] = float(np.abs(vertex).max() / flux_scale) if len(vertex) else 0.0
    return result
