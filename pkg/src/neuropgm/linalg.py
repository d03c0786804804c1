"""Dense linear-algebra primitives used throughout the package."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotSPD, RankDeficient

__all__ = ["CholeskyFactor", "cholesky_logdet", "orthogonal_procrustes"]


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor of an SPD matrix with its log-determinant."""

    L: np.ndarray
    logdet: float = field(default=None)

    def __post_init__(self):
        if self.logdet is None:
            object.__setattr__(
                self, "logdet", 2.0 * float(np.sum(np.log(np.diag(self.L)))))

    def solve(self, b):
        """A^{-1} b for the factored matrix A = L L^T."""
        return scipy.linalg.cho_solve((self.L, True), np.asarray(b))

    def solve_lower(self, b):
        """L^{-1} b."""
        return scipy.linalg.solve_triangular(self.L, np.asarray(b),
                                             lower=True)


def cholesky_logdet(A):
    """Factor a symmetric positive definite matrix.

    Parameters
    ----------
    A : (n, n) array
        Must be symmetric to 1e-10 relative; it is symmetrized before
        factorization to strip round-off asymmetry.

    Returns
    -------
    CholeskyFactor
        With ``L`` lower-triangular (positive diagonal) and
        ``logdet = 2 sum(log diag(L))``.

    Raises
    ------
    NotSPD
        When the input is asymmetric beyond tolerance or a pivot is not
        positive — the caller handed over an invalid covariance.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch("cholesky_logdet needs a square matrix")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale > 0 and np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise NotSPD("matrix is not symmetric to 1e-10 relative")
    A = 0.5 * (A + A.T)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NotSPD("matrix has a non-positive Cholesky pivot") from None
    return CholeskyFactor(L=L)


def orthogonal_procrustes(A, allow_deficient=False):
    """Closest matrix with orthonormal columns, maximizing Tr(W^T A).

    Parameters
    ----------
    A : (V, K) array with V >= K and full column rank.
    allow_deficient : bool
        Skip the rank check and return U V^T anyway; it is still a
        maximizer, just not the unique one.  Used where rank-deficient
        cross-products are routine (square alignment with T < V).

    Returns
    -------
    (V, K) array
        W = U V^T from the thin SVD A = U s V^T.

    Raises
    ------
    RankDeficient
        When the smallest singular value is below 1e-12 of the largest,
        making the maximizer non-unique (unless ``allow_deficient``).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise DimensionMismatch("need a tall (V >= K) matrix")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if not allow_deficient and (s[0] <= 0 or s[-1] < 1e-12 * s[0]):
        raise RankDeficient("input is numerically rank deficient")
    return U @ Vt
