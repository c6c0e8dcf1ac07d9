import logging

import numpy as np
import pytest
import scipy.sparse as sps

from frax.exceptions import NoConvergence, NotSPD, Singular
from frax.linsolve import (
    SparseCholesky,
    SparseLU,
    assemble_csr,
    cg_solve,
    cholesky_solve,
    is_symmetric,
    lu_solve,
)


def laplacian_1d(n):
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    return sps.diags([off, main, off], [-1, 0, 1], format="csr")


class TestAssembly:
    """Test cases for sparse assembly helpers."""

    def test_duplicates_are_summed(self):
        """Test that repeated COO entries add up."""
        matrix = assemble_csr([0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0], (2, 2))

        assert matrix[0, 0] == 3.0
        assert matrix[1, 1] == 5.0
        assert matrix.nnz == 2

    def test_is_symmetric(self):
        """Test the symmetry check."""
        assert is_symmetric(laplacian_1d(5))
        assert not is_symmetric(sps.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]])))


class TestCholesky:
    """Test cases for the sparse Cholesky solver."""

    @pytest.mark.parametrize("ordering", ["rcm", "amd"])
    def test_agrees_with_dense_solve(self, ordering):
        """Test the sparse solve against a dense solve."""
        matrix = laplacian_1d(30)
        b = np.linspace(0.0, 1.0, 30)
        x, report = cholesky_solve(matrix, b, ordering=ordering)

        assert np.allclose(x, np.linalg.solve(matrix.toarray(), b), atol=1e-10)
        assert report.residual <= 1e-10

    def test_zero_rhs(self):
        """Test that a zero right-hand side returns zero after factoring."""
        x, report = cholesky_solve(laplacian_1d(4), np.zeros(4))

        assert np.all(x == 0.0)
        assert report.iterations == 0
        assert report.method in ("cholmod", "superlu-rcm")

    def test_zero_rhs_indefinite(self):
        """Test that an indefinite matrix is rejected even for a zero right-hand side."""
        with pytest.raises(NotSPD):
            cholesky_solve(sps.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])), np.zeros(2))

    def test_indefinite(self):
        """Test that an indefinite matrix is rejected."""
        with pytest.raises(NotSPD):
            SparseCholesky(sps.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))

    def test_unsymmetric(self):
        """Test that an unsymmetric matrix is rejected."""
        with pytest.raises(NotSPD):
            SparseCholesky(sps.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]])))

    def test_unknown_ordering(self):
        """Test that an unknown ordering is rejected."""
        with pytest.raises(ValueError):
            SparseCholesky(laplacian_1d(3), ordering="metis")

    def test_reuse_factor(self):
        """Test that one factorization serves several right-hand sides."""
        matrix = laplacian_1d(10)
        factor = SparseCholesky(matrix)
        for b in np.eye(10)[:3]:
            assert np.allclose(matrix @ factor.solve(b), b, atol=1e-12)


class TestConjugateGradients:
    """Test cases for the conjugate gradient solver."""

    def test_identity(self):
        """Test that the identity converges in one iteration."""
        x, report = cg_solve(sps.identity(5, format="csr"), np.arange(5.0))

        assert np.allclose(x, np.arange(5.0))
        assert report.iterations == 1

    def test_jacobi_diagonal(self):
        """Test that Jacobi solves a diagonal system in one iteration."""
        x, report = cg_solve(sps.diags([1.0, 2.0, 3.0]), np.ones(3))

        assert np.allclose(x, [1.0, 0.5, 1.0 / 3.0])
        assert report.iterations == 1

    def test_no_convergence(self):
        """Test that the iteration cap raises NoConvergence."""
        with pytest.raises(NoConvergence) as info:
            cg_solve(sps.diags([1.0, 2.0, 3.0]), np.ones(3), max_iter=1, preconditioner=None)

        assert info.value.max_iter == 1
        assert info.value.residual > 1e-10

    def test_indefinite(self):
        """Test that non-positive curvature raises NotSPD."""
        with pytest.raises(NotSPD):
            cg_solve(sps.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])), np.array([1.0, -1.0]))

    def test_agrees_with_cholesky(self):
        """Test that CG and Cholesky agree on a Laplacian."""
        matrix = laplacian_1d(40)
        b = np.sin(np.linspace(0.0, 3.0, 40))
        x_cg, _ = cg_solve(matrix, b, tol=1e-12)
        x_ch, _ = cholesky_solve(matrix, b)

        assert np.allclose(x_cg, x_ch, atol=1e-8)

    def test_zero_rhs(self):
        """Test that a zero right-hand side needs no iterations."""
        x, report = cg_solve(laplacian_1d(4), np.zeros(4))

        assert np.all(x == 0.0)
        assert report.iterations == 0


class TestLU:
    """Test cases for the general LU solver."""

    def test_unsymmetric_system(self):
        """Test a small unsymmetric system."""
        matrix = sps.csr_matrix(np.array([[2.0, 1.0], [0.0, 3.0]]))
        x, report = lu_solve(matrix, np.array([3.0, 3.0]))

        assert np.allclose(x, [1.0, 1.0])
        assert report.residual <= 1e-14

    def test_singular(self):
        """Test that a singular matrix raises Singular."""
        with pytest.raises(Singular):
            lu_solve(sps.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), np.ones(2))

    def test_refinement_step(self, monkeypatch):
        """Test that a poor first solve is refined once."""
        exact = SparseLU.solve
        calls = []

        def sloppy(self, rhs):
            calls.append(rhs)
            x = exact(self, rhs)
            return x + 1e-6 if len(calls) == 1 else x

        monkeypatch.setattr(SparseLU, "solve", sloppy)
        matrix = sps.csr_matrix(np.array([[2.0, 1.0], [0.0, 3.0]]))
        x, report = lu_solve(matrix, np.array([3.0, 3.0]))

        assert len(calls) == 2
        assert report.iterations == 2
        assert report.residual <= 1e-10
        assert np.allclose(x, [1.0, 1.0], atol=1e-12)

    def test_residual_warning(self, monkeypatch, caplog):
        """Test that a residual above the tolerance after refinement is logged."""
        exact = SparseLU.solve
        monkeypatch.setattr(SparseLU, "solve", lambda self, rhs: exact(self, rhs) + 1e-6)
        matrix = sps.csr_matrix(np.array([[2.0, 1.0], [0.0, 3.0]]))
        with caplog.at_level(logging.WARNING, logger="frax.linsolve"):
            _, report = lu_solve(matrix, np.array([3.0, 3.0]))

        assert report.iterations == 2
        assert report.residual > 1e-10
        assert "LU solve residual" in caplog.text
