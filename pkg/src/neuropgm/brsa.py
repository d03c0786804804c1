"""Condition-covariance estimation with per-voxel AR(1) noise.

Estimates the K x K covariance of condition response patterns by
marginalizing the patterns out of the likelihood, instead of computing
similarity from point estimates.  The point-estimate route is provided
too (naive_rsa), along with the closed form for the structure it
hallucinates on correlated designs (expected_spurious_similarity).

The marginal model treats voxels independently: each voxel's response
pattern is N(0, U) with U = L L^T shared across voxels, the noise is
AR(1) with voxel-specific (sigma_v, phi_v), and optional nuisance
regressors enter with flat-prior coefficients that are profiled out at
their GLS optimum.  Everything reduces to rank-K Woodbury solves
against the tridiagonal AR(1) precision, batched over voxels.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import BadShape, BadSpec, RankDeficient, SolverFailure

__all__ = [
    "DesignMatrix",
    "BrsaModel",
    "default_hrf",
    "convolve_design",
    "similarity_from_cov",
    "naive_rsa",
    "expected_spurious_similarity",
    "brsa_neg_marginal_loglik",
    "fit_brsa",
]

_PHI_MAX = 0.95


def default_hrf(dt=1.0, duration=32.0):
    """Difference-of-gammas impulse response, peak normalized to 1.

    Positive lobe peaking near t=5, undershoot near t=15 with weight
    1/6.  Sampled at multiples of dt on [0, duration).
    """
    if dt <= 0 or duration <= dt:
        raise BadSpec("hrf sampling needs dt > 0 and duration > dt")
    from scipy.stats import gamma as _gamma

    t = np.arange(0.0, float(duration), float(dt))
    h = _gamma.pdf(t, a=6.0) - _gamma.pdf(t, a=16.0) / 6.0
    peak = np.max(h)
    if peak <= 0:
        raise BadSpec("degenerate hrf")
    return h / peak


@dataclass(frozen=True)
class DesignMatrix:
    """Convolved design: matrix is T x K, one column per condition."""

    matrix: np.ndarray
    conditions: tuple

    def __post_init__(self):
        mat = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float64))
        if mat.ndim != 2:
            raise BadShape(f"design matrix must be 2-d, got {mat.shape}")
        if mat.shape[1] != len(self.conditions):
            raise BadShape(
                f"{mat.shape[1]} columns vs {len(self.conditions)} condition names")
        if not np.all(np.isfinite(mat)):
            raise BadSpec("design matrix has non-finite entries")
        norms = np.linalg.norm(mat, axis=0)
        if np.any(norms == 0.0):
            dead = [self.conditions[i] for i in np.nonzero(norms == 0.0)[0]]
            raise BadSpec(f"all-zero design column(s): {dead}")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "conditions",
                           tuple(str(c) for c in self.conditions))

    @property
    def n_timepoints(self):
        return self.matrix.shape[0]

    @property
    def n_conditions(self):
        return self.matrix.shape[1]


def convolve_design(events, n_timepoints, kernel=None):
    """Build a DesignMatrix from (onset, duration, amplitude, condition) rows.

    Onsets and durations are in sampling units and round to the sample
    grid; each event contributes a boxcar of height amplitude, and each
    condition's summed train is convolved with the kernel and truncated
    to n_timepoints.  Events whose rounded onset falls at or beyond
    n_timepoints are rejected.  Conditions are ordered by first
    appearance.
    """
    t_total = int(n_timepoints)
    if t_total < 1:
        raise BadSpec(f"n_timepoints must be >= 1, got {n_timepoints}")
    if kernel is None:
        kernel = default_hrf()
    kernel = np.asarray(kernel, dtype=np.float64).ravel()
    if kernel.size == 0 or not np.all(np.isfinite(kernel)):
        raise BadSpec("kernel must be a non-empty finite vector")

    order = []
    trains = {}
    for row in events:
        onset, duration, amplitude, condition = row
        onset = float(onset)
        duration = float(duration)
        amplitude = float(amplitude)
        condition = str(condition)
        if not (np.isfinite(onset) and np.isfinite(duration)
                and np.isfinite(amplitude)):
            raise BadSpec(f"non-finite event row: {row}")
        if duration < 0:
            raise BadSpec(f"negative duration in event row: {row}")
        start = int(round(onset))
        if start < 0 or start >= t_total:
            raise BadSpec(
                f"event onset {onset} outside [0, {t_total}) after rounding")
        stop = int(round(onset + duration))
        stop = min(max(stop, start + 1), t_total)
        if condition not in trains:
            trains[condition] = np.zeros(t_total)
            order.append(condition)
        trains[condition][start:stop] += amplitude
    if not order:
        raise BadSpec("no events given")
    cols = [np.convolve(trains[c], kernel)[:t_total] for c in order]
    return DesignMatrix(matrix=np.column_stack(cols), conditions=tuple(order))


def similarity_from_cov(cov):
    """Correlation-normalize a covariance: U_ij / sqrt(U_ii U_jj).

    Rows with non-positive variance get zero off-diagonals; the
    diagonal is 1 everywhere.  Returns (similarity, degenerate_mask).
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise BadShape(f"covariance must be square, got {cov.shape}")
    d = np.diag(cov).copy()
    bad = ~(d > 0) | ~np.isfinite(d)
    scale = np.sqrt(np.where(bad, 1.0, d))
    sim = cov / scale[:, None] / scale[None, :]
    sim[bad, :] = 0.0
    sim[:, bad] = 0.0
    np.fill_diagonal(sim, 1.0)
    return sim, bad


def naive_rsa(x, design):
    """Point-estimate similarity: OLS patterns, cosine across pattern rows.

    The cosine is a correlation computed without demeaning the
    patterns, i.e. similarity_from_cov(W W^T).  Returns (similarity,
    patterns) with patterns K x V.
    """
    s = design.matrix if isinstance(design, DesignMatrix) \
        else np.asarray(design, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or s.ndim != 2 or x.shape[0] != s.shape[0]:
        raise BadShape(
            f"need T x V data and T x K design, got {x.shape}, {s.shape}")
    gram = s.T @ s
    try:
        w = np.linalg.solve(gram, s.T @ x)
    except np.linalg.LinAlgError:
        raise RankDeficient("design gram matrix is singular")
    sim, _ = similarity_from_cov(w @ w.T)
    return sim, w


def expected_spurious_similarity(design):
    """Correlation-normalized (S^T S)^{-1}.

    This is the similarity structure the point-estimate route reports
    on pure noise; orthogonal designs give the identity.
    """
    s = design.matrix if isinstance(design, DesignMatrix) \
        else np.asarray(design, dtype=np.float64)
    if s.ndim != 2:
        raise BadShape(f"design must be 2-d, got {s.shape}")
    gram = s.T @ s
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        raise RankDeficient("design gram matrix is singular")
    sim, _ = similarity_from_cov(inv)
    return sim


@dataclass
class BrsaModel:
    """Fitted marginal model for one dataset."""

    u: np.ndarray
    similarity: np.ndarray
    chol: np.ndarray
    sigma2: np.ndarray
    phi: np.ndarray
    s0: np.ndarray | None
    conditions: tuple
    loglik_trace: list = field(default_factory=list)
    converged: bool = True
    flagged: bool = False

    def __post_init__(self):
        if np.any(np.abs(self.phi) >= 1.0):
            raise BadSpec("fitted AR(1) coefficient left (-1, 1)")
        if np.any(self.sigma2 <= 0):
            raise BadSpec("fitted noise variance must be positive")


# ---------------------------------------------------------------------------
# marginal likelihood machinery
#
# Per voxel, with Q_v the AR(1) precision, Q_v = c_v (I + phi^2 E - phi F)
# where c_v = 1/(sigma_v^2 (1 - phi_v^2)), E zeroes the first/last diagonal
# entry of the identity and F is the super+sub diagonal adjacency.  All
# voxel-specific quantities reduce to the three cross-moments B^T B',
# B^T E B', B^T F B' of the fixed matrices S, S0, X, precomputed once.


def _tridiag_stats(a, b):
    """Columnwise a^T b, a^T E b, a^T F b for T x n arrays a, b."""
    full = np.einsum("ti,ti->i", a, b)
    inner = np.einsum("ti,ti->i", a[1:-1], b[1:-1])
    lag = np.einsum("ti,ti->i", a[:-1], b[1:]) \
        + np.einsum("ti,ti->i", a[1:], b[:-1])
    return full, inner, lag


def _pair_stats(a, b):
    """a^T b, a^T E b, a^T F b for a (T x p) against b (T x n)."""
    full = a.T @ b
    inner = a[1:-1].T @ b[1:-1]
    lag = a[:-1].T @ b[1:] + a[1:].T @ b[:-1]
    return full, inner, lag


def _apply_q(mat, coef, phi):
    """Apply Q = c (I + phi^2 E - phi F) columnwise to a T x V matrix."""
    out = mat.copy()
    out[1:-1] += (phi**2) * mat[1:-1]
    out[:-1] -= phi * mat[1:]
    out[1:] -= phi * mat[:-1]
    out *= coef
    return out


class _MarginalWorkspace:
    """Design/data cross-moments shared by every likelihood evaluation."""

    def __init__(self, s, s0, x):
        s = np.asarray(s, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if s.ndim != 2 or x.ndim != 2 or x.shape[0] != s.shape[0]:
            raise BadShape(
                f"need T x K design and T x V data, got {s.shape}, {x.shape}")
        if s.shape[0] < 2:
            raise BadShape("AR(1) noise needs at least 2 timepoints")
        if s0 is not None:
            s0 = np.asarray(s0, dtype=np.float64)
            if s0.ndim != 2 or s0.shape[0] != s.shape[0]:
                raise BadShape(
                    f"nuisance basis shape {s0.shape} does not match T={s.shape[0]}")
            if s0.shape[1] == 0:
                s0 = None
        self.s, self.s0, self.x = s, s0, x
        self.t, self.k = s.shape
        self.v = x.shape[1]
        self.ss = _pair_stats(s, s)
        self.sx = _pair_stats(s, x)
        self.xx = _tridiag_stats(x, x)
        if s0 is not None:
            self.n0 = s0.shape[1]
            self.zz = _pair_stats(s0, s0)
            self.zs = _pair_stats(s0, s)
            self.zx = _pair_stats(s0, x)

    def combine(self, triple, c, c_phi2, c_phi):
        """c*full + c_phi2*inner - c_phi*lag with per-voxel coefficients.

        Data-crossed blocks (trailing axis V) come back voxel-major;
        design-only (p x q) blocks broadcast to (V, p, q).
        """
        full, inner, lag = triple
        if full.ndim == 1:
            return c * full + c_phi2 * inner - c_phi * lag
        if full.shape[-1] == self.v:
            out = c * full + c_phi2 * inner - c_phi * lag
            return np.ascontiguousarray(out.T)
        return (c[:, None, None] * full
                + c_phi2[:, None, None] * inner
                - c_phi[:, None, None] * lag)


def brsa_neg_marginal_loglik(chol_u, log_sigma, atanh_phi, design, nuisance, x,
                             _workspace=None):
    """Negative marginal log likelihood and its gradients.

    Parameters are the lower-triangular factor of the pattern
    covariance (K x K, entries above the diagonal ignored), per-voxel
    log noise standard deviation, and per-voxel atanh AR(1)
    coefficient.  Coefficients on the `nuisance` columns (T x n0 or
    None) are profiled out at their per-voxel GLS optimum; by the
    envelope theorem the returned gradients are exact with those
    coefficients held fixed.

    Returns (value, grad_chol, grad_log_sigma, grad_atanh_phi); the
    gradient for the factor is zero above the diagonal.
    """
    ws = _workspace if _workspace is not None else _MarginalWorkspace(
        design.matrix if isinstance(design, DesignMatrix) else design,
        nuisance, x)
    t, k, v = ws.t, ws.k, ws.v

    ell = np.tril(np.asarray(chol_u, dtype=np.float64))
    if ell.shape != (k, k):
        raise BadShape(f"cholesky factor must be {k} x {k}, got {ell.shape}")
    log_sigma = np.asarray(log_sigma, dtype=np.float64).ravel()
    atanh_phi = np.asarray(atanh_phi, dtype=np.float64).ravel()
    if log_sigma.shape != (v,) or atanh_phi.shape != (v,):
        raise BadShape("noise parameter vectors need one entry per voxel")

    sigma2 = np.exp(2.0 * log_sigma)
    phi = np.tanh(atanh_phi)
    one_m_phi2 = 1.0 - phi**2
    c = 1.0 / (sigma2 * one_m_phi2)
    c_phi2 = c * phi**2
    c_phi = c * phi

    m = ws.combine(ws.ss, c, c_phi2, c_phi)             # (V, K, K)  S'QS
    sqx = ws.combine(ws.sx, c, c_phi2, c_phi)           # (V, K)     S'Qx
    xqx = ws.combine(ws.xx, c, c_phi2, c_phi)           # (V,)       x'Qx
    eye = np.eye(k)
    cap = eye + ell.T @ m @ ell
    try:
        cf = np.linalg.cholesky(cap)
    except np.linalg.LinAlgError:
        raise SolverFailure("capacitance matrix lost positive definiteness")
    logdet_cap = 2.0 * np.sum(
        np.log(np.diagonal(cf, axis1=1, axis2=2)), axis=1)
    cft = np.swapaxes(cf, 1, 2)
    capinv = np.linalg.solve(cft, np.linalg.solve(
        cf, np.broadcast_to(eye, (v, k, k)).copy()))

    if ws.s0 is not None:
        zqz = ws.combine(ws.zz, c, c_phi2, c_phi)       # (V, n0, n0)
        zqs = ws.combine(ws.zs, c, c_phi2, c_phi)       # (V, n0, K)
        zqx = ws.combine(ws.zx, c, c_phi2, c_phi)       # (V, n0)
        j = zqs @ ell                                   # S0'QS L
        jc = j @ capinv                                 # (V, n0, K)
        gram0 = zqz - jc @ np.swapaxes(j, 1, 2)         # S0' Sigma^-1 S0
        lx0 = sqx @ ell                                 # L'S'Qx
        rhs0 = zqx - np.einsum("vnk,vk->vn", jc, lx0)   # S0' Sigma^-1 x
        try:
            w0 = np.linalg.solve(gram0, rhs0[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise SolverFailure("nuisance gram matrix singular under GLS")
        # fold the profiled coefficients into the x statistics: xt = x - S0 w0
        sqx = sqx - np.einsum("vnk,vn->vk", zqs, w0)
        xqx = xqx - 2.0 * np.einsum("vn,vn->v", zqx, w0) \
            + np.einsum("vn,vnm,vm->v", w0, zqz, w0)
        xt = ws.x - ws.s0 @ w0.T
    else:
        xt = ws.x

    lx = sqx @ ell                                      # (V, K)  L'S'Q xt
    clx = (capinv @ lx[..., None])[..., 0]
    quad = xqx - np.einsum("vk,vk->v", lx, clx)

    logdet = t * np.log(sigma2) + (t - 1) * np.log(one_m_phi2) + logdet_cap
    value = 0.5 * (v * t * np.log(2.0 * np.pi)
                   + np.sum(logdet) + np.sum(quad))

    # ---- gradients ----
    # r = Sigma^-1 xt, computed as Q (xt - S L Cap^-1 L'S'Q xt)
    h = ell @ clx.T
    xhat = xt - ws.s @ h
    r = _apply_q(xhat, c, phi)                          # (T, V)
    g = ws.s.T @ r                                      # (K, V)  S'Sigma^-1 xt

    # dNLL/dU = 0.5 sum_v (S'Sigma^-1 S - g g'), then dNLL/dL = 2 (dNLL/dU) L
    ml = m @ ell
    mlc = ml @ capinv                                   # (V, K, K)
    s_sig_s = m.sum(axis=0) - np.einsum("vik,vjk->ij", mlc, ml)
    g_u = 0.5 * (s_sig_s - g @ g.T)
    grad_chol = np.tril(2.0 * g_u @ ell)

    # log sigma: tr(Sigma^-1 A) = T - K + tr(Cap^-1), r'A r = r'xt - g'Ug
    cap_inv_trace = np.einsum("vkk->v", capinv)
    u = ell @ ell.T
    gug = np.einsum("kv,kl,lv->v", g, u, g)
    r_xt = np.einsum("tv,tv->v", r, xt)
    grad_log_sigma = 2.0 * 0.5 * ((t - k + cap_inv_trace) - (r_xt - gug))

    # phi: dQ/dphi = c'(I + phi^2 E - phi F) + c (2 phi E - F),
    # c' = 2 phi c / (1 - phi^2); t_v = A r_v = xt - S U g
    tvec = xt - ws.s @ (u @ g)
    tt, t_inner, t_lag = _tridiag_stats(tvec, tvec)
    c_prime = 2.0 * phi * c / one_m_phi2
    quad_phi = c_prime * (tt + phi**2 * t_inner - phi * t_lag) \
        + c * (2.0 * phi * t_inner - t_lag)
    dm = (c_prime[:, None, None] * ws.ss[0]
          + (c_prime * phi**2 + 2.0 * c * phi)[:, None, None] * ws.ss[1]
          - (c_prime * phi + c)[:, None, None] * ws.ss[2])
    lcl = ell @ capinv @ ell.T                          # (V, K, K)
    trace_cap = np.einsum("vkl,vlk->v", dm, lcl)
    logdet_phi = trace_cap - (t - 1) * 2.0 * phi / one_m_phi2
    grad_atanh_phi = 0.5 * (logdet_phi + quad_phi) * one_m_phi2

    return value, grad_chol, grad_log_sigma, grad_atanh_phi


def _pack(ell, log_sigma, atanh_phi, k):
    idx = np.tril_indices(k)
    return np.concatenate([ell[idx], log_sigma, atanh_phi])


def _unpack(vec, k, v):
    idx = np.tril_indices(k)
    n_l = len(idx[0])
    ell = np.zeros((k, k))
    ell[idx] = vec[:n_l]
    return ell, vec[n_l:n_l + v], vec[n_l + v:]


def _whitened_residual_basis(x, s, ell, sigma2, phi, n0):
    """Top left-singular vectors of innovation-whitened residuals.

    The task contribution is removed at the per-voxel posterior mean
    w_v = U S' Sigma_v^-1 x_v; the residual then gets whitened with the
    fitted AR(1) innovations before the SVD so high-variance voxels do
    not dominate.  Nuisance structure deliberately stays in the
    residual; finding it is the point.
    """
    ws = _MarginalWorkspace(s, None, x)
    c = 1.0 / (sigma2 * (1.0 - phi**2))
    m = ws.combine(ws.ss, c, c * phi**2, c * phi)
    sqx = ws.combine(ws.sx, c, c * phi**2, c * phi)
    k = s.shape[1]
    cap = np.eye(k) + ell.T @ m @ ell
    cf = np.linalg.cholesky(cap)
    lx = sqx @ ell
    y = np.linalg.solve(cf, lx[..., None])
    clx = np.linalg.solve(np.swapaxes(cf, 1, 2), y)[..., 0]
    xhat = x - s @ (ell @ clx.T)
    r = _apply_q(xhat, c, phi)
    g = s.T @ r
    resid = x - s @ ((ell @ ell.T) @ g)
    z = np.empty_like(resid)
    sig = np.sqrt(sigma2)
    z[0] = resid[0] / sig
    z[1:] = (resid[1:] - phi * resid[:-1]) / (sig * np.sqrt(1.0 - phi**2))
    left, _, _ = np.linalg.svd(z, full_matrices=False)
    return np.ascontiguousarray(left[:, :n0])


def fit_brsa(x, design, n_nuisance=0, rounds=3, max_iters=80, tol=1e-9):
    """Fit the marginal pattern-covariance model.

    x is T x V data; design is a DesignMatrix or T x K array.  When
    n_nuisance > 0 the fit alternates `rounds` times between parameter
    optimization and re-deriving the nuisance basis from whitened
    residuals; with n_nuisance == 0 a single optimization runs.

    loglik_trace holds the objective at the start and after every
    accepted optimizer step of each round; it is monotone
    non-decreasing within a round (the basis swap between rounds can
    move it either way, and the best round wins).
    """
    if isinstance(design, DesignMatrix):
        s = design.matrix
        conditions = design.conditions
    else:
        s = np.asarray(design, dtype=np.float64)
        conditions = tuple(f"cond{i}" for i in range(s.shape[1]))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or s.ndim != 2 or x.shape[0] != s.shape[0]:
        raise BadShape(
            f"need T x V data and T x K design, got {x.shape}, {s.shape}")
    if n_nuisance < 0 or n_nuisance >= x.shape[0]:
        raise BadSpec(f"n_nuisance must be in [0, T), got {n_nuisance}")
    t, k = s.shape
    v = x.shape[1]

    # init: naive patterns for U, OLS residual lag-1 autocorrelation for noise
    _, w_hat = naive_rsa(x, s)
    u0 = w_hat @ w_hat.T / v
    u0 += (1e-3 * max(np.trace(u0), 1e-12) / k) * np.eye(k)
    ell = np.linalg.cholesky(u0)
    resid = x - s @ w_hat
    var = np.maximum(np.var(resid, axis=0), 1e-12)
    num = np.einsum("tv,tv->v", resid[1:], resid[:-1])
    den = np.einsum("tv,tv->v", resid, resid)
    phi = np.clip(num / np.maximum(den, 1e-300), -_PHI_MAX, _PHI_MAX)
    log_sigma = 0.5 * np.log(var)
    atanh_phi = np.arctanh(phi)

    sig_mid = float(np.median(log_sigma))
    z_max = float(np.arctanh(_PHI_MAX))
    bounds = ([(None, None)] * (k * (k + 1) // 2)
              + [(sig_mid - 9.0, sig_mid + 9.0)] * v
              + [(-z_max, z_max)] * v)

    s0 = None
    n_rounds = rounds if n_nuisance > 0 else 1
    trace = []
    converged = True
    best = None
    for rnd in range(n_rounds):
        ws = _MarginalWorkspace(s, s0, x)

        def objective(vec):
            l_mat, ls, ap = _unpack(vec, k, v)
            val, g_l, g_ls, g_ap = brsa_neg_marginal_loglik(
                l_mat, ls, ap, s, s0, x, _workspace=ws)
            return val, _pack(g_l, g_ls, g_ap, k)

        round_trace = []

        def record(intermediate_result):
            round_trace.append(-float(intermediate_result.fun))

        x0 = _pack(ell, log_sigma, atanh_phi, k)
        round_trace.append(-float(objective(x0)[0]))
        res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                       bounds=bounds, callback=record,
                       options={"maxiter": max_iters, "ftol": tol,
                                "gtol": 1e-7, "maxcor": 20})
        if -float(res.fun) > round_trace[-1]:
            round_trace.append(-float(res.fun))
        trace.extend(round_trace)
        ell, log_sigma, atanh_phi = _unpack(res.x, k, v)
        ell = np.tril(ell)
        converged = converged and bool(res.success)
        if best is None or float(res.fun) < best[0]:
            best = (float(res.fun), ell.copy(), log_sigma.copy(),
                    atanh_phi.copy(), None if s0 is None else s0.copy())
        if n_nuisance > 0 and rnd + 1 < n_rounds:
            s0 = _whitened_residual_basis(
                x, s, ell, np.exp(2.0 * log_sigma), np.tanh(atanh_phi),
                n_nuisance)

    flagged = False
    last_fun = -trace[-1]
    if best[0] < last_fun - 1e-9:
        # a later round ended worse; keep the best round's parameters
        _, ell, log_sigma, atanh_phi, s0 = best
        flagged = True

    u = ell @ ell.T
    sim, degenerate = similarity_from_cov(u)
    if np.any(degenerate):
        flagged = True
    return BrsaModel(
        u=u, similarity=sim, chol=ell,
        sigma2=np.exp(2.0 * log_sigma), phi=np.tanh(atanh_phi),
        s0=s0, conditions=conditions, loglik_trace=trace,
        converged=converged, flagged=flagged)
