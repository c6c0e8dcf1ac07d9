"""
Hybridized first-order upwind transport of a passive tracer.

Unknowns: a concentration per cell, one per facet and one per fracture
skeleton vertex. Facet and vertex values are fixed by flux balances with
upwinding; on fracture facets they additionally carry the fracture storage.
Time stepping is implicit Euler with a matrix that only depends on the flow,
so it is factored once per run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import InvalidProblem, Singular, SingularTransportSystem
from .fields import CellField, line_profile
from .flow import FlowSolution
from .geometry import PointClass
from .linsolve import SparseLU, assemble_csr, lu_solve
from .mesh import SimplicialMesh

logger = logging.getLogger(__name__)

FLUX_TOL_RELATIVE = 1e-14
_DOMINANCE_SLACK = 1e-8


@dataclass(eq=False)
class TransportProblem:
    """Porosities, initial and inflow data, time stepping.

    ``inflow`` is a scalar or a callable ``(points, t)``; the fracture
    values default to the matrix ones.
    """

    porosity: Any = 0.1
    fracture_porosity: Any = 0.9
    initial: Any = 0.0
    initial_fracture: Optional[float] = None
    inflow: Any = 1.0
    inflow_fracture: Any = None
    time_step: float = 5e-3
    final_time: float = 0.1

    def __post_init__(self) -> None:
        """Validate dt, T and porosities; fill the fracture defaults."""
        if not self.time_step > 0:
            raise InvalidProblem(f"time step must be positive, got {self.time_step}")
        if self.final_time < self.time_step:
            raise InvalidProblem("final time must be at least one time step")
        for name in ("porosity", "fracture_porosity"):
            value = np.asarray(getattr(self, name), dtype=float)
            if np.any(value <= 0) or np.any(value > 1):
                raise InvalidProblem(f"{name} must lie in (0, 1]")
        if self.initial_fracture is None:
            self.initial_fracture = float(np.mean(self.initial))
        if self.inflow_fracture is None:
            self.inflow_fracture = self.inflow

    @property
    def n_steps(self) -> int:
        return int(round(self.final_time / self.time_step))


def _boundary_value(data: Any, points: np.ndarray, time: float) -> np.ndarray:
    """Inflow data at boundary points and time."""
    if callable(data):
        return np.asarray(data(points, time), dtype=float).reshape(len(points))
    return np.full(len(points), float(data))


@dataclass
class TransportState:
    """Cell, facet and skeleton vertex concentrations at ``time``."""

    cell: np.ndarray
    facet: np.ndarray
    vertex: np.ndarray
    time: float = 0.0

    def copy(self) -> "TransportState":
        """Independent copy of the state arrays."""
        return TransportState(self.cell.copy(), self.facet.copy(), self.vertex.copy(), self.time)


@dataclass(frozen=True, eq=False)
class UpwindSelector:
    """True where the upwind value is the cell (resp. segment) value."""

    cell_side: np.ndarray
    fracture_side: np.ndarray


def upwind_trace_selector(flow: FlowSolution, tol_flux: float = 0.0) -> UpwindSelector:
    """Pick cell values on outflow facets; ties go to the skeleton value."""
    return UpwindSelector(
        cell_side=flow.fluxes > tol_flux,
        fracture_side=flow.fracture_fluxes > tol_flux,
    )


def initial_state(flow: FlowSolution, problem: TransportProblem) -> TransportState:
    """Initial cell, facet and skeleton vertex concentrations."""
    mesh, fmesh = flow.mesh, flow.fracture_mesh
    cell = np.broadcast_to(np.asarray(problem.initial, dtype=float), (mesh.n_cells,)).copy()
    facet = np.zeros(mesh.n_facets)
    owner = mesh.facet_cells[:, 0]
    facet[:] = cell[owner]
    facet[fmesh.facets] = float(problem.initial_fracture)  # type: ignore[arg-type]
    vertex = np.full(fmesh.n_vertices, float(problem.initial_fracture))  # type: ignore[arg-type]
    return TransportState(cell, facet, vertex, 0.0)


class TransportOperator:
    """Implicit-Euler upwind system for a fixed flow field and time step."""

    def __init__(
        self,
        flow: FlowSolution,
        problem: TransportProblem,
        source: Any = 0.0,
    ):
        self.flow = flow
        self.problem = problem
        mesh, fmesh = flow.mesh, flow.fracture_mesh
        self.mesh, self.fracture_mesh = mesh, fmesh
        nc, nf, nv = mesh.n_cells, mesh.n_facets, fmesh.n_vertices
        self.offsets = (0, nc, nc + nf)
        self.size = nc + nf + nv
        dt = problem.time_step

        scale = max(
            np.abs(flow.fluxes).max(initial=0.0),
            np.abs(flow.fracture_fluxes).max(initial=0.0),
        )
        self.tol_flux = FLUX_TOL_RELATIVE * scale
        self.selector = upwind_trace_selector(flow, self.tol_flux)
        q = np.where(np.abs(flow.fluxes) > self.tol_flux, flow.fluxes, 0.0)
        w = np.where(np.abs(flow.fracture_fluxes) > self.tol_flux, flow.fracture_fluxes, 0.0)
        self.q, self.w = q, w

        self.source = np.broadcast_to(np.asarray(source, dtype=float), (nc,)).copy()
        porosity = np.broadcast_to(np.asarray(problem.porosity, dtype=float), (nc,))
        self.cell_storage = porosity * mesh.areas / dt
        fporosity = np.broadcast_to(np.asarray(problem.fracture_porosity, dtype=float), (fmesh.n_segments,))
        self.segment_storage = fmesh.thickness * fporosity * fmesh.lengths / dt
        self.facet_storage = np.zeros(nf)
        self.facet_storage[fmesh.facets] = self.segment_storage

        boundary = mesh.boundary_facets
        owner = mesh.facet_cells[boundary, 0]
        local = np.argmax(mesh.cell_facets[owner] == boundary[:, None], axis=1)
        self.boundary_flux = q[owner, local]
        self.boundary = boundary
        self.inflow_facets = boundary[self.boundary_flux < 0]

        on_boundary = np.isin(fmesh.vertex_classes, [PointClass.CM_D, PointClass.CM_N])
        net = np.zeros(nv)
        np.add.at(net, fmesh.segment_vertices.ravel(), w.ravel())
        self.vertex_net = net
        self.boundary_vertices = np.flatnonzero(on_boundary)
        self.inflow_vertices = np.flatnonzero(on_boundary & (net < 0))

        self.matrix = self._assemble()
        self._check_m_matrix()
        try:
            self._lu = SparseLU(self.matrix)
        except Singular as exc:
            raise SingularTransportSystem(str(exc)) from exc

    def _assemble(self):
        """Cell rows, then facet rows, then skeleton vertex rows."""
        mesh, fmesh = self.mesh, self.fracture_mesh
        c0, f0, v0 = self.offsets
        nc, nf = mesh.n_cells, mesh.n_facets
        q, w = self.q, self.w
        rows: List[np.ndarray] = []
        cols: List[np.ndarray] = []
        vals: List[np.ndarray] = []

        def add(r: Any, c: Any, v: Any) -> None:
            rows.append(np.asarray(r).ravel())
            cols.append(np.asarray(c).ravel())
            vals.append(np.broadcast_to(v, np.shape(r)).ravel())

        cells = np.arange(nc)
        out = q > 0
        add(c0 + cells, c0 + cells, self.cell_storage - self.source * mesh.areas + np.where(out, q, 0.0).sum(axis=1))
        rows_c = np.repeat(cells[:, None], 3, axis=1)
        inflow = q < 0
        add(c0 + rows_c[inflow], f0 + mesh.cell_facets[inflow], q[inflow])

        # Facet rows: -sum_K q_Kf c* (+ storage + in-plane outflow on fractures).
        facet_diag = self.facet_storage.copy()
        np.add.at(facet_diag, mesh.cell_facets[inflow], -q[inflow])
        seg_out = w > 0
        if fmesh.n_segments:
            np.add.at(facet_diag, np.repeat(fmesh.facets[:, None], 2, axis=1)[seg_out], w[seg_out])
        interior = np.ones(nf, dtype=bool)
        interior[self.boundary] = False

        degenerate = interior & (facet_diag <= self.tol_flux)
        regular = interior & ~degenerate
        keep = regular[mesh.cell_facets] & out
        add(f0 + mesh.cell_facets[keep], c0 + rows_c[keep], -q[keep])
        add(f0 + np.flatnonzero(regular), f0 + np.flatnonzero(regular), facet_diag[regular])
        if fmesh.n_segments:
            seg_in = w < 0
            facets2 = np.repeat(fmesh.facets[:, None], 2, axis=1)
            add(f0 + facets2[seg_in], v0 + fmesh.segment_vertices[seg_in], w[seg_in])

        for facet in np.flatnonzero(degenerate):
            neighbours = mesh.facet_cells[facet]
            add([f0 + facet], [f0 + facet], 1.0)
            add(np.full(2, f0 + facet), c0 + neighbours, -0.5)
        if degenerate.any():
            logger.debug("%d zero-flux facets regularized", int(degenerate.sum()))

        boundary = self.boundary
        add(f0 + boundary, f0 + boundary, 1.0)
        outflow = self.boundary_flux >= 0
        add(f0 + boundary[outflow], c0 + mesh.facet_cells[boundary[outflow], 0], -1.0)

        if fmesh.n_vertices:
            self._assemble_vertices(add)
        n = self.size
        return assemble_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n, n))

    def _assemble_vertices(self, add: Callable[..., None]) -> None:
        """Skeleton vertex rows: fixed inflow values or upwind flux balances."""
        fmesh = self.fracture_mesh
        f0, v0 = self.offsets[1], self.offsets[2]
        w = self.w
        nv = fmesh.n_vertices
        into_segments = np.zeros(nv)
        np.add.at(into_segments, fmesh.segment_vertices[w < 0], -w[w < 0])
        diag = into_segments.copy()
        outflow_boundary = np.zeros(nv)
        outflow_boundary[self.boundary_vertices] = np.maximum(self.vertex_net[self.boundary_vertices], 0.0)
        diag += outflow_boundary

        fixed = np.zeros(nv, dtype=bool)
        fixed[self.inflow_vertices] = True
        degenerate = ~fixed & (diag <= self.tol_flux)
        regular = ~fixed & ~degenerate

        vertices = np.arange(nv)
        add(v0 + vertices[fixed], v0 + vertices[fixed], 1.0)
        add(v0 + vertices[regular], v0 + vertices[regular], diag[regular])
        facets2 = np.repeat(fmesh.facets[:, None], 2, axis=1)
        upstream = (w > 0) & regular[fmesh.segment_vertices]
        add(v0 + fmesh.segment_vertices[upstream], f0 + facets2[upstream], -w[upstream])
        for vertex in np.flatnonzero(degenerate):
            segments = fmesh.segments_at(vertex)
            add([v0 + vertex], [v0 + vertex], 1.0)
            add(np.full(len(segments), v0 + vertex), f0 + fmesh.facets[segments], -1.0 / len(segments))
        if degenerate.any():
            logger.debug("%d zero-flux skeleton vertices regularized", int(degenerate.sum()))

    def _check_m_matrix(self) -> None:
        """Reject rows that are not weakly diagonally dominant with positive diagonal."""
        matrix = self.matrix.tocsr()
        diag = matrix.diagonal()
        off = np.asarray(abs(matrix).sum(axis=1)).ravel() - np.abs(diag)
        if np.any(diag <= 0):
            row = int(np.flatnonzero(diag <= 0)[0])
            raise SingularTransportSystem(f"non-positive diagonal in transport row {row}")
        slack = _DOMINANCE_SLACK * np.maximum(diag, off) + self.tol_flux
        weak = diag < off - slack
        if weak.any():
            row = int(np.flatnonzero(weak)[0])
            raise SingularTransportSystem(
                f"transport row {row} is not diagonally dominant "
                f"({diag[row]:.3e} < {off[row]:.3e}); reduce the time step or check the source"
            )

    def rhs(self, state: TransportState, time: float) -> np.ndarray:
        """Storage terms of the previous state plus inflow boundary data at ``time``."""
        mesh, fmesh = self.mesh, self.fracture_mesh
        c0, f0, v0 = self.offsets
        b = np.zeros(self.size)
        b[c0 : c0 + mesh.n_cells] = self.cell_storage * state.cell
        b[f0 : f0 + mesh.n_facets] = self.facet_storage * state.facet
        inflow = self.inflow_facets
        b[f0 + inflow] = _boundary_value(self.problem.inflow, mesh.facet_midpoints[inflow], time)
        vertices = self.inflow_vertices
        b[v0 + vertices] = _boundary_value(self.problem.inflow_fracture, fmesh.points[vertices], time)
        return b

    def step(self, state: TransportState) -> TransportState:
        """Advance one implicit Euler step with the factored operator."""
        time = state.time + self.problem.time_step
        x = self._lu.solve(self.rhs(state, time))
        c0, f0, v0 = self.offsets
        return TransportState(
            cell=x[c0:f0].copy(),
            facet=x[f0:v0].copy(),
            vertex=x[v0:].copy(),
            time=time,
        )

    def mass(self, state: TransportState) -> float:
        """Matrix plus fracture tracer mass of a state."""
        dt = self.problem.time_step
        fmesh = self.fracture_mesh
        matrix = float((self.cell_storage * state.cell).sum()) * dt
        fracture = float((self.segment_storage * state.facet[fmesh.facets]).sum()) * dt
        return matrix + fracture

    def boundary_outflux(self, state: TransportState) -> float:
        """Net tracer flux leaving through the boundary at the state's time."""
        matrix = float((self.boundary_flux * state.facet[self.boundary]).sum())
        fmesh = self.fracture_mesh
        fracture = 0.0
        if len(self.boundary_vertices):
            carried = np.where(
                self.w > 0,
                state.facet[fmesh.facets][:, None],
                state.vertex[fmesh.segment_vertices],
            )
            at_boundary = np.isin(fmesh.segment_vertices, self.boundary_vertices)
            fracture = float((self.w * carried)[at_boundary].sum())
        return matrix + fracture

    def source_rate(self, state: TransportState) -> float:
        """Mass gained per unit time through the cell source term."""
        return float((self.source * self.mesh.areas * state.cell).sum())


def transport_step(
    state: TransportState,
    problem: TransportProblem,
    flow: FlowSolution,
    operator: Optional[TransportOperator] = None,
    source: Any = 0.0,
) -> TransportState:
    """Advance one implicit Euler step.

    ``source`` is only used when no prebuilt ``operator`` is given.
    """
    operator = operator or TransportOperator(flow, problem, source)
    return operator.step(state)


class Observer:
    """Called after every step; yields ``(quantity, value)`` rows."""

    name = "observer"

    def __call__(self, state: TransportState, operator: TransportOperator) -> Iterable[Tuple[str, float]]:
        return ()


class TotalMass(Observer):
    """Stored mass with the boundary and source rates that change it."""

    name = "mass"

    def __call__(self, state, operator):
        yield "mass", operator.mass(state)
        yield "boundary_outflux", operator.boundary_outflux(state)
        yield "source_rate", operator.source_rate(state)


class MeanConcentration(Observer):
    """Area-weighted mean matrix concentration over cells with centroid in a box."""

    def __init__(self, box: Sequence[float], name: str = "mean_concentration"):
        self.box = tuple(float(v) for v in box)
        self.name = name
        self._cells: Optional[np.ndarray] = None

    def __call__(self, state, operator):
        if self._cells is None:
            x0, y0, x1, y1 = self.box
            c = operator.mesh.centroids
            inside = (c[:, 0] >= x0) & (c[:, 0] <= x1) & (c[:, 1] >= y0) & (c[:, 1] <= y1)
            self._cells = np.flatnonzero(inside)
        areas = operator.mesh.areas[self._cells]
        if areas.sum() > 0:
            yield self.name, float((areas * state.cell[self._cells]).sum() / areas.sum())


class LineProfileObserver(Observer):
    """Record matrix concentration along a line at requested times (default: the last step)."""

    def __init__(
        self,
        p0: Sequence[float],
        p1: Sequence[float],
        n_samples: int = 200,
        times: Optional[Sequence[float]] = None,
        name: str = "profile",
    ):
        self.p0, self.p1 = p0, p1
        self.n_samples = n_samples
        self.times = None if times is None else list(times)
        self.name = name
        self.profiles: Dict[float, pd.DataFrame] = {}

    def __call__(self, state, operator):
        last = state.time >= operator.problem.final_time - 0.5 * operator.problem.time_step
        wanted = last if self.times is None else any(
            abs(state.time - t) <= 0.5 * operator.problem.time_step for t in self.times
        )
        if wanted:
            field = CellField(operator.mesh, state.cell)
            self.profiles[round(state.time, 12)] = line_profile(field, self.p0, self.p1, self.n_samples)
        return ()


@dataclass
class TransportRun:
    """Final state and the observer time series of a run."""

    state: TransportState
    history: pd.DataFrame
    observers: Sequence[Observer] = field(default_factory=tuple)


def run_transport(
    flow: FlowSolution,
    problem: TransportProblem,
    observers: Sequence[Observer] = (),
    source: Any = 0.0,
    state: Optional[TransportState] = None,
) -> TransportRun:
    """Run from t = 0 (or ``state``) to the final time."""
    operator = TransportOperator(flow, problem, source)
    state = initial_state(flow, problem) if state is None else state
    observers = list(observers) or [TotalMass()]
    records: List[Dict[str, Any]] = []
    n_steps = problem.n_steps
    report_every = max(1, n_steps // 10)
    for n in range(1, n_steps + 1):
        state = operator.step(state)
        for observer in observers:
            for quantity, value in observer(state, operator):
                records.append({"time": state.time, "quantity": quantity, "value": value})
        if n % report_every == 0 or n == n_steps:
            logger.info(
                "transport step %d/%d t=%.4g c in [%.3g, %.3g]",
                n,
                n_steps,
                state.time,
                state.cell.min(),
                state.cell.max(),
            )
    history = pd.DataFrame.from_records(records, columns=["time", "quantity", "value"])
    return TransportRun(state=state, history=history, observers=observers)


def plain_upwind_step(
    mesh: SimplicialMesh,
    fluxes: np.ndarray,
    concentration: np.ndarray,
    porosity: Any,
    time_step: float,
    inflow: float,
    source: Any = 0.0,
) -> np.ndarray:
    """One implicit Euler step of the cell-centered upwind scheme without fractures."""
    nc = mesh.n_cells
    storage = np.broadcast_to(np.asarray(porosity, dtype=float), (nc,)) * mesh.areas / time_step
    src = np.broadcast_to(np.asarray(source, dtype=float), (nc,)) * mesh.areas
    out = np.where(fluxes > 0, fluxes, 0.0)
    inn = np.where(fluxes < 0, fluxes, 0.0)
    rows = [np.arange(nc)]
    cols = [np.arange(nc)]
    vals = [storage - src + out.sum(axis=1)]
    b = storage * concentration
    facets = mesh.cell_facets
    neighbour = np.where(
        mesh.facet_cells[facets, 0] == np.arange(nc)[:, None],
        mesh.facet_cells[facets, 1],
        mesh.facet_cells[facets, 0],
    )
    internal = (inn < 0) & (neighbour >= 0)
    rows.append(np.repeat(np.arange(nc)[:, None], 3, axis=1)[internal])
    cols.append(neighbour[internal])
    vals.append(inn[internal])
    external = (inn < 0) & (neighbour < 0)
    b = b - (inn * external).sum(axis=1) * inflow
    matrix = assemble_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (nc, nc))
    x, _ = lu_solve(matrix, b)
    return x
