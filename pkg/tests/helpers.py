"""Shared oracles and finite-difference utilities for the test suite."""

import numpy as np

DEFAULT_FD_STEP = 1e-5


def dense_mvn_logpdf(x, mean, cov):
    """Reference Gaussian log-density via explicit inverse and determinant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    mean = np.asarray(mean, dtype=np.float64).ravel()
    cov = np.asarray(cov, dtype=np.float64)
    n = x.size
    r = x - mean
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0, "oracle covariance must be positive definite"
    quad = r @ np.linalg.inv(cov) @ r
    return -0.5 * (n * np.log(2 * np.pi) + logdet + quad)


def fd_gradient(fn, eta, step=DEFAULT_FD_STEP):
    """Central finite differences of a scalar function of a flat vector."""
    eta = np.asarray(eta, dtype=np.float64)
    out = np.zeros_like(eta)
    for i in range(eta.size):
        up = eta.copy()
        dn = eta.copy()
        up[i] += step
        dn[i] -= step
        out[i] = (fn(up) - fn(dn)) / (2 * step)
    return out


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=None):
    """Relative comparison with a scale-aware absolute floor."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    floor = atol if atol is not None else rtol * scale
    err = np.abs(analytic - numeric)
    tol = np.maximum(rtol * np.abs(numeric), floor)
    assert np.all(err <= tol), (
        f"gradient mismatch: max abs err {err.max():.3e}, "
        f"worst index {int(np.argmax(err - tol))}")


def random_spd(rng, n, scale=1.0):
    B = rng.standard_normal((n, n))
    return scale * (B @ B.T + n * np.eye(n))


def vec(X):
    """Column-stacking vectorization (Fortran order)."""
    return np.asarray(X).reshape(-1, order="F")
