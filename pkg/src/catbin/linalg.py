"""Shared symmetric-positive-definite helpers.

Every SPD factorization in the package goes through :func:`cholesky`, so that
determinants, inverses and solves are all derived from the same lower factor.
"""

import numpy as np
from scipy import linalg as sla

from catbin.errors import InvalidCovariance


def cholesky(A, ridge: float = 0.0) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T == A + ridge * I``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidCovariance(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidCovariance("matrix has non-finite entries")
    if ridge:
        A = A + ridge * np.eye(A.shape[0])
    try:
        return sla.cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise InvalidCovariance("matrix is not positive definite") from exc


def logdet(L: np.ndarray) -> float:
    """log|A| given the Cholesky factor of A."""
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_solve(L: np.ndarray, B) -> np.ndarray:
    return sla.cho_solve((L, True), B, check_finite=False)


def chol_inverse(L: np.ndarray) -> np.ndarray:
    inv = chol_solve(L, np.eye(L.shape[0]))
    # symmetrize so shared covariances are exactly symmetric
    return 0.5 * (inv + inv.T)


def spd_inverse(A, ridge: float = 0.0) -> np.ndarray:
    return chol_inverse(cholesky(A, ridge=ridge))
