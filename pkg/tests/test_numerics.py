import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from iss_node.numerics import (
    DiagPos, InvalidInputError, SingularMatrixError, is_negative_definite, lu_factor, lu_solve,
    solve_linear, spectral_norm, sym_eigh, sym_lambda_max, sym_lambda_max_vec, sym_lambda_min,
)

finite = st.floats(-10, 10, allow_nan=False)


def sym(M):
    return 0.5 * (M + M.T)


@given(arrays(float, st.tuples(st.integers(1, 8), st.just(8)), elements=finite))
def test_eigenvalues_match_lapack(X):
    n = X.shape[0]
    M = sym(X[:, :n])
    vals, vecs = sym_eigh(M)
    assert np.allclose(vals, np.linalg.eigvalsh(M), atol=1e-10 * max(1.0, np.abs(M).max()))
    assert np.allclose(vecs.T @ vecs, np.eye(n), atol=1e-10)
    assert np.allclose(M @ vecs, vecs * vals, atol=1e-9 * max(1.0, np.abs(M).max()))


def test_known_spectrum():
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert sym_lambda_max(M) == pytest.approx(3.0, abs=1e-14)
    assert sym_lambda_min(M) == pytest.approx(1.0, abs=1e-14)
    lam, v = sym_lambda_max_vec(M)
    assert abs(abs(v @ np.array([1.0, 1.0]) / np.sqrt(2.0)) - 1.0) < 1e-12


def test_one_by_one_and_diagonal():
    assert sym_lambda_max(np.array([[-3.5]])) == -3.5
    D = np.diag([4.0, -1.0, 2.0])
    assert list(sym_eigh(D)[0]) == [-1.0, 2.0, 4.0]


def test_asymmetric_rejected():
    with pytest.raises(InvalidInputError):
        sym_lambda_max(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_non_square_and_nonfinite_rejected():
    with pytest.raises(InvalidInputError):
        sym_lambda_max(np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        sym_lambda_max(np.array([[np.nan]]))


def test_negative_definite():
    assert is_negative_definite(-np.eye(3))
    assert not is_negative_definite(np.diag([-1.0, 0.0]))


@given(arrays(float, (5, 5), elements=finite), arrays(float, 5, elements=finite))
def test_solve_matches_numpy(A, b):
    A = A + 25.0 * np.eye(5)  # keep it well conditioned
    assert np.allclose(solve_linear(A, b), np.linalg.solve(A, b), atol=1e-10)


def test_lu_needs_pivoting():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    LU, perm = lu_factor(A)
    assert np.allclose(lu_solve(LU, perm, np.array([2.0, 3.0])), [3.0, 2.0])


def test_matrix_rhs():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    B = np.eye(2)
    assert np.allclose(solve_linear(A, B), np.linalg.inv(A))


def test_singular():
    with pytest.raises(SingularMatrixError):
        solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_rhs_shape_checked():
    with pytest.raises(InvalidInputError):
        solve_linear(np.eye(2), np.ones(3))


def test_spectral_norm():
    M = np.array([[3.0, 0.0], [4.0, 5.0]])
    assert spectral_norm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-12)


def test_diagpos():
    d = DiagPos(np.log([1.0, 4.0]))
    assert np.allclose(d.values, [1.0, 4.0])
    assert np.allclose(d.sqrt(), [1.0, 2.0])
    assert np.allclose(d.inv_sqrt(), [1.0, 0.5])
    assert np.allclose(d.matrix(), np.diag([1.0, 4.0]))
