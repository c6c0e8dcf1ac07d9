import numpy as np
import pytest

from frax.flow import FlowProblem
from frax.geometry import DomainBoundary
from frax.mesh import rectangle_mesh


def unit_square_mesh(n, tags=("N", "D", "N", "D"), permeability=1.0):
    """n x n grid on the unit square, Dirichlet on the left and right by default."""
    grid = np.linspace(0.0, 1.0, n + 1)
    boundary = DomainBoundary.rectangle(0.0, 0.0, 1.0, 1.0, tags=tags)
    return rectangle_mesh(grid, grid, boundary=boundary, permeability=permeability)


def linear_pressure(points):
    return 1.0 - points[:, 0]


@pytest.fixture
def square_mesh():
    return unit_square_mesh(4)


@pytest.fixture
def linear_problem(square_mesh):
    """Pressure 1 - x with no-flow top and bottom: velocity (1, 0)."""
    return FlowProblem(square_mesh, dirichlet=linear_pressure)
