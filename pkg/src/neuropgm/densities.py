"""Gaussian log-densities over vectors and matrices.

The matrix-normal density treats an m x n matrix X as Gaussian with a
separable covariance: vec(X) ~ N(vec(M), C (x) R) where R is the m x m
row covariance, C the n x n column covariance, and (x) the Kronecker
product.  ``kron_sum_mvn_logpdf`` evaluates the non-separable case
where the covariance of vec(X) is a *sum* of two Kronecker products,
C1 (x) R1 + C2 (x) R2, without ever materializing an mn x mn matrix:
whiten by the second pair's Cholesky factors, eigendecompose the
whitened first pair, and work on the resulting eigenvalue grid.

All densities use the standard normalization (the -mn/2 log 2 pi and
1/2 factors included).
"""

import numpy as np
import scipy.linalg

from .covariance import CovarianceSpec
from .errors import DimensionMismatch, NotSPD
from .linalg import cholesky_logdet

__all__ = [
    "mvn_logpdf",
    "matnormal_logpdf",
    "matnormal_logpdf_grads",
    "kron_sum_mvn_logpdf",
    "kron_sum_mvn_logpdf_grads",
]

_LOG_2PI = np.log(2.0 * np.pi)


def _dense_cov(cov, n, what):
    """Materialize a CovarianceSpec or validate a dense square array."""
    if isinstance(cov, CovarianceSpec):
        return cov.materialize(n)
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"{what} must be square")
    if cov.shape[0] != n:
        raise DimensionMismatch(
            f"{what} has size {cov.shape[0]}, expected {n}")
    return cov


def _chol_logdet(cov, n, what):
    """(lower Cholesky, logdet), using structured paths when available."""
    if isinstance(cov, CovarianceSpec):
        return cov.cholesky_lower(n), cov.logdet(n)
    factor = cholesky_logdet(_dense_cov(cov, n, what))
    return factor.L, factor.logdet


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log-density.

    Parameters
    ----------
    x, mean : (n,) arrays
    cov : CovarianceSpec or (n, n) SPD array
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    mean = np.asarray(mean, dtype=np.float64).ravel()
    if x.size != mean.size:
        raise DimensionMismatch("x and mean sizes differ")
    n = x.size
    r = x - mean
    if isinstance(cov, CovarianceSpec):
        logdet = cov.logdet(n)
        quad = float(r @ cov.solve(r, n))
    else:
        factor = cholesky_logdet(_dense_cov(cov, n, "cov"))
        logdet = factor.logdet
        quad = float(r @ factor.solve(r))
    return -0.5 * (n * _LOG_2PI + logdet + quad)


def _matnormal_core(X, M, row_cov, col_cov):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("X must be 2-D")
    m, n = X.shape
    if M is None or np.isscalar(M):
        M = np.full((m, n), 0.0 if M is None else float(M))
    else:
        M = np.asarray(M, dtype=np.float64)
    if M.shape != X.shape:
        raise DimensionMismatch("M shape does not match X")
    return X, M, m, n


def matnormal_logpdf(X, M, row_cov, col_cov):
    """Matrix-normal log-density of X ~ MN(M, row_cov, col_cov).

    Equals ``mvn_logpdf(vec(X), vec(M), col_cov (x) row_cov)``:

        -mn/2 log 2pi - n/2 logdet R - m/2 logdet C
        - 1/2 Tr[C^{-1} (X-M)^T R^{-1} (X-M)]
    """
    X, M, m, n = _matnormal_core(X, M, row_cov, col_cov)
    Y = X - M
    if isinstance(row_cov, CovarianceSpec):
        ld_r = row_cov.logdet(m)
        RiY = row_cov.solve(Y, m)
    else:
        f = cholesky_logdet(_dense_cov(row_cov, m, "row_cov"))
        ld_r, RiY = f.logdet, f.solve(Y)
    if isinstance(col_cov, CovarianceSpec):
        ld_c = col_cov.logdet(n)
        YCi = col_cov.solve(Y.T, n).T
    else:
        f = cholesky_logdet(_dense_cov(col_cov, n, "col_cov"))
        ld_c, YCi = f.logdet, f.solve(Y.T).T
    quad = float(np.sum(RiY * YCi))
    return -0.5 * (m * n * _LOG_2PI + n * ld_r + m * ld_c + quad)


def matnormal_logpdf_grads(X, M, row_cov, col_cov):
    """Matrix-normal log-density with gradients.

    Returns
    -------
    value : float
    d_row : (m, m) array — d value / d R at the materialized row cov
    d_col : (n, n) array — d value / d C
    d_mean : (m, n) array — d value / d M

    Chain these into family parameters with
    ``CovarianceSpec.chain_cov_grad``.
    """
    X, M, m, n = _matnormal_core(X, M, row_cov, col_cov)
    Y = X - M
    Rd = _dense_cov(row_cov, m, "row_cov")
    Cd = _dense_cov(col_cov, n, "col_cov")
    fR = cholesky_logdet(Rd)
    fC = cholesky_logdet(Cd)
    RiY = fR.solve(Y)
    A = fC.solve(RiY.T).T            # R^{-1} (X-M) C^{-1}
    quad = float(np.sum(Y * A))
    value = -0.5 * (m * n * _LOG_2PI + n * fR.logdet + m * fC.logdet + quad)
    Rinv = fR.solve(np.eye(m))
    Cinv = fC.solve(np.eye(n))
    d_row = -0.5 * (n * Rinv - A @ Cd @ A.T)
    d_col = -0.5 * (m * Cinv - A.T @ Rd @ A)
    return value, 0.5 * (d_row + d_row.T), 0.5 * (d_col + d_col.T), A


def _kron_sum_parts(X, M, first, second):
    """Shared setup: whiten by the second pair, eigendecompose the first."""
    X, M, m, n = _matnormal_core(X, M, None, None)
    R1, C1 = first
    R2, C2 = second
    L_R, ld_R2 = _chol_logdet(R2, m, "R2")
    L_C, ld_C2 = _chol_logdet(C2, n, "C2")
    R1d = _dense_cov(R1, m, "R1")
    C1d = _dense_cov(C1, n, "C1")

    def whiten_sym(L, A):
        # L^{-1} A L^{-T}, symmetrized against round-off
        half = scipy.linalg.solve_triangular(L, A, lower=True)
        out = scipy.linalg.solve_triangular(L, half.T, lower=True).T
        return 0.5 * (out + out.T)

    def psd_eigs(d, name):
        # first-pair factors are covariances: negative eigenvalues beyond
        # round-off scale mean the input is not PSD
        tol = 1e-10 * max(float(np.max(np.abs(d))), 1.0)
        if float(np.min(d)) < -tol:
            raise NotSPD(f"{name} is not positive semi-definite")
        return np.clip(d, 0.0, None)

    d_R, U_R = np.linalg.eigh(whiten_sym(L_R, R1d))
    d_C, U_C = np.linalg.eigh(whiten_sym(L_C, C1d))
    d_R = psd_eigs(d_R, "R1")
    d_C = psd_eigs(d_C, "C1")
    delta = 1.0 + np.outer(d_R, d_C)
    Y = X - M
    Z = scipy.linalg.solve_triangular(L_R, Y, lower=True)
    Z = scipy.linalg.solve_triangular(L_C, Z.T, lower=True).T
    Zt = U_R.T @ Z @ U_C
    value = -0.5 * (m * n * _LOG_2PI
                    + np.sum(np.log(delta)) + n * ld_R2 + m * ld_C2
                    + np.sum(Zt * Zt / delta))
    return (float(value), m, n, L_R, L_C, U_R, U_C, d_R, d_C, delta, Zt,
            R1d, C1d)


def kron_sum_mvn_logpdf(X, M, first, second):
    """Gaussian log-density of vec(X) under C1 (x) R1 + C2 (x) R2.

    Parameters
    ----------
    X : (m, n) array
    M : (m, n) array, scalar, or None for zero mean
    first : (R1, C1) — row/column factors of the first Kronecker term;
        positive *semi*-definite is allowed (e.g. a low-rank signal).
    second : (R2, C2) — must be strictly SPD; this pair is used for
        whitening.

    Covariances may be CovarianceSpec instances or dense arrays.
    """
    return _kron_sum_parts(X, M, first, second)[0]


def kron_sum_mvn_logpdf_grads(X, M, first, second):
    """Kronecker-sum log-density with gradients.

    Returns
    -------
    value : float
    grads : dict with keys "R1", "C1", "R2", "C2" (dense symmetric
        gradients at the materialized covariances) and "M".
    """
    (value, m, n, L_R, L_C, U_R, U_C, d_R, d_C, delta, Zt,
     R1d, C1d) = _kron_sum_parts(X, M, first, second)
    R2d = _dense_cov(second[0], m, "R2")
    C2d = _dense_cov(second[1], n, "C2")
    # Qt = L_R^{-T} U_R, Pt = L_C^{-T} U_C
    Qt = scipy.linalg.solve_triangular(L_R, U_R, lower=True, trans="T")
    Pt = scipy.linalg.solve_triangular(L_C, U_C, lower=True, trans="T")
    inv_delta = 1.0 / delta
    W2 = Qt @ (Zt * inv_delta) @ Pt.T     # Sigma^{-1} vec(X-M), matricized

    def sym(A):
        return 0.5 * (A + A.T)

    row_dC = inv_delta @ d_C              # per j: sum_tau d_C / delta
    row_1 = inv_delta @ np.ones(n)
    col_dR = d_R @ inv_delta              # per tau: sum_j d_R / delta
    col_1 = np.ones(m) @ inv_delta
    g_R1 = -0.5 * (Qt * row_dC) @ Qt.T + 0.5 * W2 @ C1d @ W2.T
    g_C1 = -0.5 * (Pt * col_dR) @ Pt.T + 0.5 * W2.T @ R1d @ W2
    g_R2 = -0.5 * (Qt * row_1) @ Qt.T + 0.5 * W2 @ C2d @ W2.T
    g_C2 = -0.5 * (Pt * col_1) @ Pt.T + 0.5 * W2.T @ R2d @ W2
    grads = {"R1": sym(g_R1), "C1": sym(g_C1),
             "R2": sym(g_R2), "C2": sym(g_C2), "M": W2}
    return value, grads
