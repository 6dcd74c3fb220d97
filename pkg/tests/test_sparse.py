import numpy as np
import pytest
import scipy.sparse as sp

from tools.sparse import LinearSolverError, bicgstab_solve, cg_solve, from_triplets, symmetry_defect
from tools.verify import DenseSystem, dense_mirror_solve


def test_duplicates_are_summed():
    A = from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0), (1, 1, 4.0), (0, 1, -1.0)])
    assert np.array_equal(A.toarray(), [[3.0, -1.0], [0.0, 4.0]])


def test_assembly_is_order_independent(rng):
    rows = rng.integers(0, 6, 60)
    cols = rng.integers(0, 6, 60)
    vals = rng.standard_normal(60)
    A = from_triplets(6, 6, (rows, cols, vals))
    perm = rng.permutation(60)
    B = from_triplets(6, 6, (rows[perm], cols[perm], vals[perm]))
    assert np.array_equal(A.data, B.data)
    assert np.array_equal(A.indices, B.indices)
    assert np.array_equal(A.indptr, B.indptr)


def test_empty_and_out_of_range():
    assert from_triplets(3, 2, []).nnz == 0
    with pytest.raises(IndexError):
        from_triplets(2, 2, [(2, 0, 1.0)])


def test_cg_two_by_two():
    A = from_triplets(2, 2, [(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
    x = cg_solve(A, [1.0, 2.0], tol=1e-12)
    assert np.allclose(x, [1.0 / 11.0, 7.0 / 11.0], atol=1e-12)
    assert np.allclose(x, dense_mirror_solve(DenseSystem.from_sparse(A, [1.0, 2.0])), atol=1e-12)


def test_zero_rhs_gives_zero():
    A = sp.identity(5, format="csr")
    assert np.array_equal(cg_solve(A, np.zeros(5)), np.zeros(5))
    assert np.array_equal(bicgstab_solve(A, np.zeros(5)), np.zeros(5))


def test_bicgstab_nonsymmetric_matches_dense(rng):
    n = 40
    dense = np.diag(4.0 + rng.random(n)) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
    A = sp.csr_matrix(dense)
    b = rng.standard_normal(n)
    assert symmetry_defect(A) > 0.0
    x = bicgstab_solve(A, b, tol=1e-12)
    reference = dense_mirror_solve(DenseSystem.from_sparse(A, b))
    assert np.linalg.norm(x - reference) <= 1e-9 * np.linalg.norm(reference)


def test_laplacian_against_dense_oracle():
    n = 50
    A = sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    b = np.linspace(0.0, 1.0, n)
    x = cg_solve(A, b, tol=1e-13)
    reference = dense_mirror_solve(DenseSystem.from_sparse(A, b))
    assert np.linalg.norm(x - reference) <= 1e-9 * np.linalg.norm(reference)
    assert symmetry_defect(A) == 0.0


def test_non_converging_solve_raises():
    n = 30
    A = sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    with pytest.raises(LinearSolverError) as info:
        cg_solve(A, np.ones(n), tol=1e-14, maxit=2)
    assert info.value.residual > 1e-14


def test_non_finite_rhs_raises():
    with pytest.raises(LinearSolverError):
        cg_solve(sp.identity(2, format="csr"), [1.0, np.nan])
