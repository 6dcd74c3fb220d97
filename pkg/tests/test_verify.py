import numpy as np
import pytest
import scipy.sparse as sp

from tools.verify import (
    DenseSystem,
    NonFiniteEvaluationError,
    SingularSystemError,
    dense_mirror_solve,
    fd_directional,
)


def test_identity_returns_rhs():
    rhs = np.array([1.0, -2.0, 3.5])
    assert np.allclose(dense_mirror_solve(DenseSystem.from_sparse(sp.identity(3), rhs)), rhs)


def test_dense_mirror_is_entrywise_equal():
    A = sp.random(30, 30, density=0.2, random_state=7, format="csr") + sp.identity(30)
    system = DenseSystem.from_sparse(A, np.ones(30))
    assert np.array_equal(system.matrix, A.toarray())


def test_singular_row_reports_pivot():
    matrix = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    with pytest.raises(SingularSystemError) as info:
        dense_mirror_solve(DenseSystem(matrix, np.ones(3)))
    assert info.value.pivot >= 0


def test_size_limit():
    with pytest.raises(ValueError):
        DenseSystem.from_sparse(sp.identity(201), np.ones(201))


def test_fd_of_quadratic():
    result = fd_directional(lambda x: 0.5 * float(x[0] ** 2), np.array([3.0]), np.array([1.0]))
    assert result.estimate == pytest.approx(3.0, abs=1e-9)
    assert result.plateau
    assert not result.kink


def test_fd_of_constant():
    result = fd_directional(lambda x: 2.0, np.zeros(2), np.ones(2))
    assert result.estimate == 0.0


def test_fd_flags_kink():
    result = fd_directional(lambda x: float(abs(x[0])), np.array([0.0]), np.array([1.0]))
    assert result.kink
    assert not result.plateau


def test_fd_rejects_non_finite():
    with pytest.raises(NonFiniteEvaluationError):
        fd_directional(lambda x: float("inf"), np.zeros(1), np.ones(1))
