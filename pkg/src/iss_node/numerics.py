"""Small dense linear-algebra kernels used by the stability construction.

Matrices are plain 2-D float64 numpy arrays. Only array arithmetic is taken
from numpy; eigenvalues come from a Jacobi iteration and linear solves from
an LU factorisation with partial pivoting, both written here.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SYMMETRY_TOL = 1e-9
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
SINGULAR_TOL = 1e-13


class NumericsError(ValueError):
    """Base class for numerics failures."""


class InvalidInputError(NumericsError):
    pass


class SingularMatrixError(NumericsError):
    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


@dataclass(frozen=True)
class DiagPos:
    """Positive diagonal matrix stored through the logs of its entries."""

    log_values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.log_values.shape[0])

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def sqrt(self) -> np.ndarray:
        return np.exp(0.5 * self.log_values)

    def inv_sqrt(self) -> np.ndarray:
        return np.exp(-0.5 * self.log_values)

    def matrix(self) -> np.ndarray:
        return np.diag(self.values)

    @classmethod
    def identity(cls, dim: int) -> "DiagPos":
        return cls(np.zeros(dim))


def _check_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    return M


def _symmetrize(M) -> np.ndarray:
    M = _check_square(M)
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if M.size and np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise InvalidInputError("matrix is not symmetric within tolerance")
    return 0.5 * (M + M.T)


@lru_cache(maxsize=None)
def _tournament(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Round-robin schedule: every index pair appears in exactly one round and
    the pairs inside a round are disjoint, so their rotations commute."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        p = np.array([a for a, _ in pairs], dtype=int)
        q = np.array([b for _, b in pairs], dtype=int)
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def sym_eigh(M, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
    symmetric matrix by cyclic Jacobi rotations.

    Disjoint rotations of one round are applied together; a sweep visits every
    off-diagonal pair once. Iteration stops once the off-diagonal Frobenius norm
    drops below ``tol`` times the Frobenius norm of the input.
    """
    A = _symmetrize(M).copy()
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    target = tol * float(np.linalg.norm(A))
    rounds = _tournament(n)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(A.diagonal())))
        if off <= target:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore"):
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            J = np.eye(n)
            J[p, p] = c
            J[q, q] = c
            J[p, q] = s
            J[q, p] = -s
            A = J.T @ A @ J
            V = V @ J
    else:
        raise NumericsError("Jacobi iteration did not converge")
    w = A.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def sym_lambda_max(M) -> float:
    return float(sym_eigh(M)[0][-1])


def sym_lambda_min(M) -> float:
    return float(sym_eigh(M)[0][0])


def sym_lambda_max_vec(M) -> tuple[float, np.ndarray]:
    """Largest eigenvalue with a unit eigenvector (used for its derivative)."""
    w, V = sym_eigh(M)
    return float(w[-1]), V[:, -1].copy()


def is_negative_definite(M, tol: float = 1e-12) -> bool:
    return sym_lambda_max(M) < -tol


def lu_factor(A):
    """LU factorisation with partial pivoting, returning (LU, perm)."""
    LU = _check_square(A).copy()
    n = LU.shape[0]
    perm = np.arange(n)
    scale = float(np.max(np.abs(LU))) if n else 0.0
    for k in range(n):
        piv = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[piv, k]) <= SINGULAR_TOL * scale or scale == 0.0:
            diag = np.abs(np.diag(LU)[:k])
            big = float(diag.max()) if k else scale
            cond = np.inf if LU[piv, k] == 0.0 else big / abs(LU[piv, k])
            raise SingularMatrixError("matrix is singular to working precision", cond)
        if piv != k:
            LU[[k, piv]] = LU[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        LU[k + 1:, k] /= LU[k, k]
        LU[k + 1:, k + 1:] -= np.outer(LU[k + 1:, k], LU[k, k + 1:])
    return LU, perm


def lu_solve(LU, perm, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    y = b[perm].copy()
    n = LU.shape[0]
    for i in range(1, n):
        y[i] -= LU[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - LU[i, i + 1:] @ y[i + 1:]) / LU[i, i]
    return y


def solve_linear(A, b) -> np.ndarray:
    """Solve ``A x = b`` for square ``A``; ``b`` may be a vector or a matrix of
    right-hand sides (one per column)."""
    A = _check_square(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise InvalidInputError(f"right-hand side has {b.shape[0]} rows, matrix has {A.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise InvalidInputError("right-hand side has non-finite entries")
    LU, perm = lu_factor(A)
    return lu_solve(LU, perm, b)


def spectral_norm(M) -> float:
    """Operator 2-norm via the largest eigenvalue of the Gram matrix."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    G = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    return float(np.sqrt(max(sym_lambda_max(G), 0.0)))
