"""Piecewise-linear cell fields and line sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import PointOutsideDomain
from .mesh import SimplicialMesh


@dataclass(frozen=True, eq=False)
class CellField:
    """Field given per cell by its centroid value and a constant gradient."""

    mesh: SimplicialMesh
    values: np.ndarray
    gradients: Optional[np.ndarray] = None

    @classmethod
    def from_reconstruction(cls, mesh: SimplicialMesh, reconstruction: np.ndarray) -> "CellField":
        return cls(mesh, reconstruction[:, 0], reconstruction[:, 1:3])

    def evaluate(
        self,
        points: Any,
        prefer: Optional[Sequence[float]] = None,
        cells: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if cells is None:
            cells = self.mesh.locate(points, prefer=prefer)
        outside = cells < 0
        if outside.any():
            raise PointOutsideDomain(
                f"{int(outside.sum())} points outside the mesh, first at "
                f"{tuple(points[outside][0])}"
            )
        value = self.values[cells].astype(float)
        if self.gradients is not None:
            offset = points - self.mesh.centroids[cells]
            value = value + (self.gradients[cells] * offset).sum(axis=1)
        return value


def line_profile(
    field: CellField, p0: Sequence[float], p1: Sequence[float], n_samples: int = 200
) -> pd.DataFrame:
    """Sample a field at equispaced points on [p0, p1].

    Columns: ``s`` (arc length from p0), ``x``, ``y``, ``value``. Samples on
    a cell edge take the cell whose centroid is nearer p0.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    t = np.linspace(0.0, 1.0, n_samples)
    points = p0 + t[:, None] * (p1 - p0)
    values = field.evaluate(points, prefer=p0)
    return pd.DataFrame(
        {
            "s": t * np.linalg.norm(p1 - p0),
            "x": points[:, 0],
            "y": points[:, 1],
            "value": values,
        }
    )
