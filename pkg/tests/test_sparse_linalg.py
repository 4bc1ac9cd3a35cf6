"""Tests for sparse SPD factorization, CG, and the dense elimination oracle."""

import numpy as np
import pytest
import scipy.sparse as sp

from admmpde import mesh_fem, sparse_linalg


def random_spd(n, seed, density=0.3):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    a[rng.random((n, n)) > density] = 0.0
    a = a @ a.T + n * np.eye(n)
    return a


class TestSparseMatrix:
    def test_from_csr_roundtrip(self):
        a = sp.csr_matrix(np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]))
        m = sparse_linalg.SparseMatrix.from_csr(a, symmetric=True)
        np.testing.assert_array_equal(m.to_csr().toarray(), a.toarray())
        assert m.n == 3

    def test_rejects_bad_indptr(self):
        with pytest.raises(ValueError):
            sparse_linalg.SparseMatrix(n=2, indptr=[0, 1], indices=[0], data=[1.0])

    def test_rejects_unsorted_columns(self):
        with pytest.raises(ValueError):
            sparse_linalg.SparseMatrix(
                n=2, indptr=[0, 2, 2], indices=[1, 0], data=[1.0, 2.0]
            )

    def test_rejects_false_symmetry_claim(self):
        a = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            sparse_linalg.SparseMatrix.from_csr(a, symmetric=True)


class TestFactorize:
    def test_matches_dense_oracle(self):
        a = random_spd(40, seed=0)
        rng = np.random.default_rng(1)
        b = rng.standard_normal((40, 3))
        factor = sparse_linalg.factorize_spd(sp.csr_matrix(a))
        x = sparse_linalg.solve_factored(factor, b)
        x_oracle = sparse_linalg.dense_solve_oracle(a, b)
        np.testing.assert_allclose(x, x_oracle, atol=1e-10)

    def test_fem_system(self):
        grid = mesh_fem.build_grid(4)
        fem = mesh_fem.assemble_p1(grid)
        a = fem.M + 0.1 * fem.K
        factor = sparse_linalg.factorize_spd(a)
        rng = np.random.default_rng(2)
        b = rng.standard_normal(grid.n_interior)
        x = sparse_linalg.solve_factored(factor, b)
        np.testing.assert_allclose(a @ x, b, atol=1e-12)

    def test_vector_rhs(self):
        a = random_spd(12, seed=3)
        factor = sparse_linalg.factorize_spd(sp.csr_matrix(a))
        b = np.arange(12.0)
        x = sparse_linalg.solve_factored(factor, b)
        assert x.shape == (12,)
        np.testing.assert_allclose(a @ x, b, atol=1e-10)

    def test_indefinite_rejected(self):
        a = sp.csr_matrix(np.diag([1.0, -1.0, 2.0]))
        with pytest.raises(sparse_linalg.NotSpdError):
            sparse_linalg.factorize_spd(a)

    def test_unsymmetric_rejected(self):
        a = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
        with pytest.raises(sparse_linalg.NotSpdError):
            sparse_linalg.factorize_spd(a)

    def test_counter_increments(self):
        before = sparse_linalg.factorization_count()
        sparse_linalg.factorize_spd(sp.eye(5, format="csr"))
        assert sparse_linalg.factorization_count() == before + 1

    def test_rhs_size_check(self):
        factor = sparse_linalg.factorize_spd(sp.eye(4, format="csr"))
        with pytest.raises(ValueError):
            sparse_linalg.solve_factored(factor, np.ones(5))


class TestCg:
    def test_solves_to_tolerance(self):
        a = random_spd(30, seed=4)
        rng = np.random.default_rng(5)
        b = rng.standard_normal(30)
        x, iters = sparse_linalg.cg_spd(lambda v: a @ v, b, np.zeros(30), 1e-10, 200)
        assert iters < 200
        assert np.linalg.norm(a @ x - b) <= 1e-9 * np.linalg.norm(b)

    def test_finite_termination_few_eigenvalues(self):
        # Three distinct eigenvalues: CG converges in at most three steps.
        rng = np.random.default_rng(6)
        q, _ = np.linalg.qr(rng.standard_normal((20, 20)))
        a = q @ np.diag(np.repeat([1.0, 3.0, 7.0], [7, 7, 6])) @ q.T
        b = rng.standard_normal(20)
        _, iters = sparse_linalg.cg_spd(lambda v: a @ v, b, np.zeros(20), 1e-9, 50)
        assert iters <= 3

    def test_zero_residual_start(self):
        a = np.diag([2.0, 5.0])
        x_true = np.array([1.0, -1.0])
        x, iters = sparse_linalg.cg_spd(lambda v: a @ v, a @ x_true, x_true, 1e-12, 10)
        assert iters == 0
        np.testing.assert_array_equal(x, x_true)

    def test_indefinite_raises(self):
        a = np.diag([1.0, -1.0])
        with pytest.raises(sparse_linalg.NotSpdError):
            sparse_linalg.cg_spd(lambda v: a @ v, np.array([0.0, 1.0]), np.zeros(2), 1e-9, 10)

    def test_residuals_shrink(self):
        a = random_spd(25, seed=8)
        rng = np.random.default_rng(9)
        b = rng.standard_normal(25)
        norms = []

        def tracked(v):
            return a @ v

        x = np.zeros(25)
        for target in (1e-2, 1e-5, 1e-9):
            x, _ = sparse_linalg.cg_spd(tracked, b, np.zeros(25), target, 200)
            norms.append(np.linalg.norm(a @ x - b))
        assert norms[0] > norms[1] > norms[2]


class TestDenseOracle:
    def test_known_solution(self):
        a = np.array([[4.0, 1.0], [1.0, 3.0]])
        b = np.array([1.0, 2.0])
        x = sparse_linalg.dense_solve_oracle(a, b)
        np.testing.assert_allclose(a @ x, b, atol=1e-14)

    def test_needs_pivoting(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        x = sparse_linalg.dense_solve_oracle(a, np.array([3.0, 4.0]))
        np.testing.assert_allclose(x, [4.0, 3.0], atol=1e-14)

    def test_matrix_rhs(self):
        a = random_spd(15, seed=10)
        b = np.random.default_rng(11).standard_normal((15, 4))
        x = sparse_linalg.dense_solve_oracle(a, b)
        np.testing.assert_allclose(a @ x, b, atol=1e-9)

    def test_agrees_with_numpy(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((20, 20)) + 5 * np.eye(20)
        b = rng.standard_normal(20)
        np.testing.assert_allclose(
            sparse_linalg.dense_solve_oracle(a, b), np.linalg.solve(a, b), atol=1e-10
        )

    def test_singular_rejected(self):
        a = np.ones((3, 3))
        with pytest.raises(ValueError):
            sparse_linalg.dense_solve_oracle(a, np.ones(3))

    def test_size_cap(self):
        with pytest.raises(ValueError):
            sparse_linalg.dense_solve_oracle(np.eye(2001), np.ones(2001))
