"""
Text and VTK file formats.

Mesh file::

    VERTICES n        then n lines "x y"
    CELLS m           then m lines "i j k"
    BOUNDARY b        (optional) b lines "i j tag", tag in {D, N}
    FRACFACETS f      (optional) f lines "i j fracture_id"

Fracture file::

    FRACTURES n       then n lines "x0 y0 x1 y1 thickness kind k"

All writers go through a temporary file in the target directory followed by
a rename, so readers never see a half-written file.
"""

from __future__ import annotations

import contextlib
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Sequence, Tuple, Union

import meshio
import numpy as np
import pandas as pd

from .exceptions import FraxIOError, InvalidFracture, InvalidMesh
from .geometry import Fracture, FractureKind
from .mesh import BoundaryTag, SimplicialMesh

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]


@contextlib.contextmanager
def atomic_path(path: PathLike, suffix: str = "") -> Iterator[Path]:
    """Yield a temporary path next to ``path``; rename it into place on success."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=suffix or ".tmp", dir=target.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, target)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _sections(path: PathLike) -> Dict[str, List[List[str]]]:
    try:
        with open(path, encoding="utf-8") as handle:
            lines = [line.split() for line in handle if line.strip() and not line.lstrip().startswith("#")]
    except OSError as exc:
        raise FraxIOError(f"cannot read {path}: {exc}") from exc
    sections: Dict[str, List[List[str]]] = {}
    pos = 0
    while pos < len(lines):
        head = lines[pos]
        if len(head) != 2 or not head[1].isdigit():
            raise FraxIOError(f"{path}: expected '<SECTION> <count>', got {' '.join(head)!r}")
        name, count = head[0].upper(), int(head[1])
        body = lines[pos + 1 : pos + 1 + count]
        if len(body) != count:
            raise FraxIOError(f"{path}: section {name} is truncated")
        sections[name] = body
        pos += count + 1
    return sections


def read_fractures(path: PathLike) -> List[Fracture]:
    """Read a FRACTURES file."""
    sections = _sections(path)
    if "FRACTURES" not in sections:
        raise FraxIOError(f"{path}: missing FRACTURES section")
    fractures = []
    for row in sections["FRACTURES"]:
        if len(row) != 7:
            raise FraxIOError(f"{path}: fracture line needs 7 fields, got {len(row)}")
        try:
            x0, y0, x1, y1, thickness = (float(v) for v in row[:5])
            fractures.append(Fracture((x0, y0), (x1, y1), thickness, FractureKind(row[5].upper()), float(row[6])))
        except (ValueError, InvalidFracture) as exc:
            raise FraxIOError(f"{path}: bad fracture line {' '.join(row)!r}: {exc}") from exc
    return fractures


def write_fractures(fractures: Sequence[Fracture], path: PathLike) -> None:
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as handle:
        handle.write(f"FRACTURES {len(fractures)}\n")
        for f in fractures:
            handle.write(
                f"{f.start[0]!r} {f.start[1]!r} {f.end[0]!r} {f.end[1]!r} "
                f"{f.thickness!r} {f.kind.value} {f.conductivity!r}\n"
            )


def read_mesh(path: PathLike, permeability: Any = 1.0) -> SimplicialMesh:
    """Read a mesh file with optional boundary and fracture facet sections."""
    sections = _sections(path)
    for required in ("VERTICES", "CELLS"):
        if required not in sections:
            raise FraxIOError(f"{path}: missing {required} section")
    try:
        vertices = np.array(sections["VERTICES"], dtype=float)
        cells = np.array(sections["CELLS"], dtype=np.int64)
        mesh = SimplicialMesh.from_cells(vertices, cells, permeability=permeability)
    except (ValueError, InvalidMesh) as exc:
        raise FraxIOError(f"{path}: {exc}") from exc

    tags = mesh.boundary_tags.copy()
    for i, j, tag in sections.get("BOUNDARY", []):
        facet = int(mesh.facet_index([(int(i), int(j))])[0])
        if facet < 0 or mesh.facet_cells[facet, 1] >= 0:
            raise FraxIOError(f"{path}: ({i}, {j}) is not a boundary facet")
        if tag.upper() not in ("D", "N"):
            raise FraxIOError(f"{path}: unknown boundary tag {tag!r}")
        tags[facet] = BoundaryTag.DIRICHLET if tag.upper() == "D" else BoundaryTag.NEUMANN
    fracture_tags = mesh.fracture_tags.copy()
    for i, j, fid in sections.get("FRACFACETS", []):
        facet = int(mesh.facet_index([(int(i), int(j))])[0])
        if facet < 0:
            raise FraxIOError(f"{path}: ({i}, {j}) is not a facet")
        fracture_tags[facet] = int(fid)
    return mesh.with_tags(boundary_tags=tags, fracture_tags=fracture_tags)


def write_mesh(mesh: SimplicialMesh, path: PathLike) -> None:
    """Write the mesh file format read by :func:`read_mesh`."""
    boundary = np.flatnonzero(mesh.boundary_tags != BoundaryTag.NONE)
    fractures = np.flatnonzero(mesh.fracture_tags >= 0)
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as handle:
        handle.write(f"VERTICES {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            handle.write(f"{float(x)!r} {float(y)!r}\n")
        handle.write(f"CELLS {mesh.n_cells}\n")
        for i, j, k in mesh.cells:
            handle.write(f"{i} {j} {k}\n")
        if len(boundary):
            handle.write(f"BOUNDARY {len(boundary)}\n")
            for facet in boundary:
                i, j = mesh.facets[facet]
                tag = "D" if mesh.boundary_tags[facet] == BoundaryTag.DIRICHLET else "N"
                handle.write(f"{i} {j} {tag}\n")
        if len(fractures):
            handle.write(f"FRACFACETS {len(fractures)}\n")
            for facet in fractures:
                i, j = mesh.facets[facet]
                handle.write(f"{i} {j} {mesh.fracture_tags[facet]}\n")
    logger.info("wrote mesh with %d cells to %s", mesh.n_cells, path)


def write_csv(frame: pd.DataFrame, path: PathLike) -> None:
    """Write a table with ',' separator, '.' decimal and a header row."""
    try:
        with atomic_path(path) as tmp:
            frame.to_csv(tmp, index=False, float_format="%.12g")
    except OSError as exc:
        raise FraxIOError(f"cannot write {path}: {exc}") from exc
    logger.info("wrote %s (%d rows)", path, len(frame))


def export_fields(mesh: SimplicialMesh, fields: Mapping[str, np.ndarray], path: PathLike) -> None:
    """Write cell fields to a legacy ASCII VTK unstructured grid."""
    points = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    cell_data = {}
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.n_cells:
            raise FraxIOError(f"field {name!r} has {values.shape[0]} values for {mesh.n_cells} cells")
        cell_data[name] = [values]
    grid = meshio.Mesh(points, [("triangle", mesh.cells)], cell_data=cell_data)
    try:
        with atomic_path(path, suffix=".vtk") as tmp:
            meshio.write(tmp, grid, file_format="vtk", binary=False)
    except OSError as exc:
        raise FraxIOError(f"cannot write {path}: {exc}") from exc
    logger.info("wrote %d cell fields to %s", len(cell_data), path)


def read_vtk(path: PathLike) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
    """Read back ``(points, triangles, cell fields)`` from a VTK file."""
    try:
        grid = meshio.read(path, file_format="vtk")
    except Exception as exc:
        raise FraxIOError(f"cannot read {path}: {exc}") from exc
    triangles = grid.get_cells_type("triangle")
    fields = {name: np.asarray(blocks[0]) for name, blocks in grid.cell_data.items()}
    return np.asarray(grid.points)[:, :2], np.asarray(triangles), fields
