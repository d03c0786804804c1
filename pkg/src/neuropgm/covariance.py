"""Structured covariance families with a shared logdet/solve contract.

Five variants cover every covariance in the package: scaled identity,
diagonal, stationary AR(1), dense SPD, and a squared-exponential kernel
over spatial locations.  Each exposes

- ``materialize(n)``   dense SPD matrix,
- ``logdet(n)``        log-determinant,
- ``solve(b, n)``      apply the inverse,
- ``cholesky_lower(n)``lower Cholesky factor,
- ``unconstrained()``  a free parameter vector (log/atanh/Cholesky maps),
- ``with_unconstrained(eta)`` the spec rebuilt from such a vector,
- ``chain_cov_grad(G, n)``    chain rule mapping d f / d Sigma (dense,
  symmetric) into d f / d eta for the unconstrained vector.

AR(1) convention: entry (i, j) = sigma2 * phi**|i-j|, so sigma2 is the
stationary variance.  Its inverse is tridiagonal, which ``solve`` uses
directly instead of factoring a dense matrix.
"""

import numpy as np
import scipy.linalg

from .errors import BadSpec, DimensionMismatch, NotSPD

__all__ = [
    "CovarianceSpec",
    "ScaledIdentity",
    "Diagonal",
    "AR1",
    "DenseSPD",
    "SEKernel",
    "cov_materialize",
]


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise BadSpec(f"{what} must be finite")


class CovarianceSpec:
    """Base class. Instances are immutable after construction."""

    def dim(self):
        """Fixed dimension, or None when the spec works at any size."""
        return None

    def _resolve_n(self, n):
        fixed = self.dim()
        if n is None:
            if fixed is None:
                raise DimensionMismatch(
                    f"{type(self).__name__} needs an explicit size")
            return fixed
        n = int(n)
        if n < 1:
            raise DimensionMismatch("size must be >= 1")
        if fixed is not None and n != fixed:
            raise DimensionMismatch(
                f"{type(self).__name__} has fixed size {fixed}, got {n}")
        return n

    def materialize(self, n=None):
        raise NotImplementedError

    def logdet(self, n=None):
        raise NotImplementedError

    def solve(self, b, n=None):
        raise NotImplementedError

    def cholesky_lower(self, n=None):
        raise NotImplementedError

    def unconstrained(self):
        raise NotImplementedError

    def with_unconstrained(self, eta):
        raise NotImplementedError

    def chain_cov_grad(self, G, n=None):
        raise NotImplementedError


class ScaledIdentity(CovarianceSpec):
    """sigma2 * I at any size."""

    def __init__(self, variance):
        variance = float(variance)
        if not variance > 0 or not np.isfinite(variance):
            raise NotSPD(f"variance must be positive, got {variance}")
        self.variance = variance

    def __repr__(self):
        return f"ScaledIdentity({self.variance!r})"

    def materialize(self, n=None):
        n = self._resolve_n(n)
        return self.variance * np.eye(n)

    def logdet(self, n=None):
        n = self._resolve_n(n)
        return n * np.log(self.variance)

    def solve(self, b, n=None):
        b = np.asarray(b, dtype=np.float64)
        self._resolve_n(b.shape[0] if n is None else n)
        return b / self.variance

    def cholesky_lower(self, n=None):
        n = self._resolve_n(n)
        return np.sqrt(self.variance) * np.eye(n)

    def unconstrained(self):
        return np.array([np.log(self.variance)])

    def with_unconstrained(self, eta):
        return ScaledIdentity(np.exp(float(eta[0])))

    def chain_cov_grad(self, G, n=None):
        # d Sigma / d log sigma2 = Sigma
        n = self._resolve_n(G.shape[0] if n is None else n)
        return np.array([self.variance * np.trace(G)])


class Diagonal(CovarianceSpec):
    """diag(values) with strictly positive entries."""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        _check_finite(values, "diagonal entries")
        if values.size < 1:
            raise DimensionMismatch("diagonal must be non-empty")
        if not np.all(values > 0):
            raise NotSPD("diagonal entries must be positive")
        self.values = values

    def __repr__(self):
        return f"Diagonal(n={self.values.size})"

    def dim(self):
        return self.values.size

    def materialize(self, n=None):
        self._resolve_n(n)
        return np.diag(self.values)

    def logdet(self, n=None):
        self._resolve_n(n)
        return float(np.sum(np.log(self.values)))

    def solve(self, b, n=None):
        b = np.asarray(b, dtype=np.float64)
        self._resolve_n(b.shape[0] if n is None else n)
        if b.ndim == 1:
            return b / self.values
        return b / self.values[:, None]

    def cholesky_lower(self, n=None):
        self._resolve_n(n)
        return np.diag(np.sqrt(self.values))

    def unconstrained(self):
        return np.log(self.values)

    def with_unconstrained(self, eta):
        return Diagonal(np.exp(np.asarray(eta, dtype=np.float64)))

    def chain_cov_grad(self, G, n=None):
        self._resolve_n(G.shape[0] if n is None else n)
        return self.values * np.diag(G)


class AR1(CovarianceSpec):
    """Stationary AR(1): entry (i, j) = sigma2 * phi**|i-j|, |phi| < 1."""

    def __init__(self, variance, phi):
        variance = float(variance)
        phi = float(phi)
        if not variance > 0 or not np.isfinite(variance):
            raise NotSPD(f"variance must be positive, got {variance}")
        if not abs(phi) < 1:
            raise NotSPD(f"|phi| must be < 1, got {phi}")
        self.variance = variance
        self.phi = phi

    def __repr__(self):
        return f"AR1({self.variance!r}, {self.phi!r})"

    def _lag(self, n):
        idx = np.arange(n)
        return np.abs(idx[:, None] - idx[None, :])

    def materialize(self, n=None):
        n = self._resolve_n(n)
        return self.variance * self.phi ** self._lag(n)

    def logdet(self, n=None):
        n = self._resolve_n(n)
        return n * np.log(self.variance) + (n - 1) * np.log(1 - self.phi ** 2)

    def solve(self, b, n=None):
        # Tridiagonal precision: (I + phi^2 E - phi F) / (sigma2 (1 - phi^2))
        # with E = diag(0,1,..,1,0) and F the first-neighbor adjacency.
        b = np.asarray(b, dtype=np.float64)
        n = self._resolve_n(b.shape[0] if n is None else n)
        if b.shape[0] != n:
            raise DimensionMismatch("b rows do not match size")
        if n == 1:
            return b / self.variance
        squeeze = b.ndim == 1
        if squeeze:
            b = b[:, None]
        phi = self.phi
        out = b.copy()
        out[1:-1] += phi ** 2 * b[1:-1]
        out[:-1] -= phi * b[1:]
        out[1:] -= phi * b[:-1]
        out /= self.variance * (1 - phi ** 2)
        return out[:, 0] if squeeze else out

    def cholesky_lower(self, n=None):
        # Closed form: column 0 is phi**i, column j >= 1 is
        # phi**(i-j) * sqrt(1-phi^2) for i >= j; scaled by sigma.
        n = self._resolve_n(n)
        sigma = np.sqrt(self.variance)
        if n == 1:
            return np.array([[sigma]])
        i = np.arange(n)[:, None]
        j = np.arange(n)[None, :]
        L = np.where(i >= j, self.phi ** np.maximum(i - j, 0), 0.0)
        L[:, 1:] *= np.sqrt(1 - self.phi ** 2)
        return sigma * L

    def unconstrained(self):
        return np.array([np.log(self.variance), np.arctanh(self.phi)])

    def with_unconstrained(self, eta):
        return AR1(np.exp(float(eta[0])), np.tanh(float(eta[1])))

    def chain_cov_grad(self, G, n=None):
        n = self._resolve_n(G.shape[0] if n is None else n)
        sigma = self.materialize(n)
        g_logv = float(np.sum(G * sigma))
        lag = self._lag(n)
        dphi = np.where(lag > 0,
                        lag * self.phi ** np.maximum(lag - 1, 0), 0.0)
        g_atanh = float(np.sum(G * (self.variance * dphi))) \
            * (1 - self.phi ** 2)
        return np.array([g_logv, g_atanh])


class DenseSPD(CovarianceSpec):
    """Explicit dense SPD matrix, parameterized by its Cholesky factor."""

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatch("DenseSPD needs a square matrix")
        _check_finite(matrix, "DenseSPD entries")
        scale = np.max(np.abs(matrix))
        if scale > 0 and np.max(np.abs(matrix - matrix.T)) > 1e-10 * scale:
            raise NotSPD("matrix is not symmetric to 1e-10 relative")
        matrix = 0.5 * (matrix + matrix.T)
        try:
            self._L = np.linalg.cholesky(matrix)
        except np.linalg.LinAlgError:
            raise NotSPD("Cholesky factorization failed") from None
        self.matrix = matrix

    def __repr__(self):
        return f"DenseSPD(n={self.matrix.shape[0]})"

    def dim(self):
        return self.matrix.shape[0]

    def materialize(self, n=None):
        self._resolve_n(n)
        return self.matrix.copy()

    def logdet(self, n=None):
        self._resolve_n(n)
        return 2.0 * float(np.sum(np.log(np.diag(self._L))))

    def solve(self, b, n=None):
        b = np.asarray(b, dtype=np.float64)
        self._resolve_n(b.shape[0] if n is None else n)
        return scipy.linalg.cho_solve((self._L, True), b)

    def cholesky_lower(self, n=None):
        self._resolve_n(n)
        return self._L.copy()

    def unconstrained(self):
        # Row-major packed lower triangle of L, diagonal in log space.
        n = self.matrix.shape[0]
        rows, cols = np.tril_indices(n)
        packed = self._L[rows, cols].copy()
        packed[rows == cols] = np.log(np.diag(self._L))
        return packed

    def with_unconstrained(self, eta):
        eta = np.asarray(eta, dtype=np.float64)
        n = self.matrix.shape[0]
        rows, cols = np.tril_indices(n)
        if eta.size != rows.size:
            raise DimensionMismatch("packed Cholesky length mismatch")
        L = np.zeros((n, n))
        L[rows, cols] = eta
        L[np.arange(n), np.arange(n)] = np.exp(np.diag(L))
        return DenseSPD(L @ L.T)

    def chain_cov_grad(self, G, n=None):
        self._resolve_n(G.shape[0] if n is None else n)
        G = 0.5 * (G + G.T)
        gradL = 2.0 * G @ self._L
        n = self.matrix.shape[0]
        diag = np.arange(n)
        gradL[diag, diag] *= np.diag(self._L)  # chain through log-diagonal
        rows, cols = np.tril_indices(n)
        return gradL[rows, cols]


class SEKernel(CovarianceSpec):
    """Squared-exponential kernel over fixed locations.

    Entry (i, j) = rho * exp(-||x_i - x_j||^2 / (2 l^2)) + jitter * [i=j].
    ``jitter=None`` means the default floor 1e-8 * rho, which then tracks
    rho under reparameterization.
    """

    def __init__(self, points, rho, ell, jitter=None):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1:
            raise DimensionMismatch("points must be (n,) or (n, d)")
        _check_finite(points, "kernel points")
        rho = float(rho)
        ell = float(ell)
        if not rho > 0 or not ell > 0:
            raise NotSPD("rho and ell must be positive")
        if jitter is not None and not float(jitter) >= 0:
            raise NotSPD("jitter must be non-negative")
        self.points = points
        self.rho = rho
        self.ell = ell
        self.jitter = None if jitter is None else float(jitter)
        self._chol = None

    def __repr__(self):
        return (f"SEKernel(n={self.points.shape[0]}, rho={self.rho!r}, "
                f"ell={self.ell!r})")

    def dim(self):
        return self.points.shape[0]

    def _sqdist(self):
        sq = np.sum(self.points ** 2, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * self.points @ self.points.T
        return np.maximum(d2, 0.0)

    def _effective_jitter(self):
        return 1e-8 * self.rho if self.jitter is None else self.jitter

    def materialize(self, n=None):
        self._resolve_n(n)
        K = self.rho * np.exp(-self._sqdist() / (2.0 * self.ell ** 2))
        K[np.diag_indices_from(K)] += self._effective_jitter()
        return K

    def _factor(self):
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.materialize())
            except np.linalg.LinAlgError:
                raise NotSPD("kernel matrix is numerically singular; "
                             "increase jitter") from None
        return self._chol

    def logdet(self, n=None):
        self._resolve_n(n)
        return 2.0 * float(np.sum(np.log(np.diag(self._factor()))))

    def solve(self, b, n=None):
        b = np.asarray(b, dtype=np.float64)
        self._resolve_n(b.shape[0] if n is None else n)
        return scipy.linalg.cho_solve((self._factor(), True), b)

    def cholesky_lower(self, n=None):
        self._resolve_n(n)
        return self._factor().copy()

    def unconstrained(self):
        return np.array([np.log(self.rho), np.log(self.ell)])

    def with_unconstrained(self, eta):
        return SEKernel(self.points, np.exp(float(eta[0])),
                        np.exp(float(eta[1])), jitter=self.jitter)

    def chain_cov_grad(self, G, n=None):
        self._resolve_n(G.shape[0] if n is None else n)
        d2 = self._sqdist()
        K0 = self.rho * np.exp(-d2 / (2.0 * self.ell ** 2))
        if self.jitter is None:
            # jitter = 1e-8 rho scales with rho, so d Sigma / d log rho
            # is the full materialized matrix
            dl_rho = float(np.sum(G * K0)) \
                + 1e-8 * self.rho * float(np.trace(G))
        else:
            dl_rho = float(np.sum(G * K0))
        dl_ell = float(np.sum(G * (K0 * d2 / self.ell ** 2)))
        return np.array([dl_rho, dl_ell])


def cov_materialize(spec, n=None):
    """Dense SPD matrix for ``spec`` at size ``n``.

    ``n`` is required for the free-size variants (ScaledIdentity, AR1)
    and must match the fixed dimension otherwise.
    """
    if isinstance(spec, np.ndarray):
        spec = DenseSPD(spec)
    return spec.materialize(n)
