"""Matrix-variate shared response models with separable residuals.

Two related generative models for multi-subject T x V data with
Kronecker-structured residual covariance Sigma_t (x) Sigma_v:

- shared-response variant ("mnsrm"): X_m^T = W_m S + mu_m 1^T + E_m
  with the shared response S ~ MN(0, Sigma_s, I) integrated out and
  W_m an unconstrained per-subject parameter.  Fit by
  expectation-conditional-maximization.
- dual-probabilistic variant ("dpsrm"): the subject bases W_m ~
  MN(0, I, Sigma_w) are integrated out instead and S is a parameter.
  Fit by gradient ascent on the marginal likelihood.

Both marginals are Kronecker sums handled by kron_sum_mvn_logpdf:
stacking subjects on the voxel axis gives covariance
I_T (x) (W Sigma_s W^T) + Sigma_t (x) Sigma_v for the first variant,
and per subject (S^T Sigma_w S) (x) I_V + Sigma_t (x) Sigma_v for the
second.  Identifiability of the signal scale is fixed by unit trace on
Sigma_s / Sigma_w, compensated in W / S.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize, minimize_scalar

from .covariance import AR1, CovarianceSpec, Diagonal, DenseSPD, ScaledIdentity
from .densities import (kron_sum_mvn_logpdf, kron_sum_mvn_logpdf_grads,
                        matnormal_logpdf)
from .errors import BadShape, BadSpec, DimensionMismatch, SolverFailure
from .linalg import cholesky_logdet
from .srm import fit_srm_deterministic

__all__ = [
    "MnModel",
    "mnsrm_marginal_loglik",
    "dpsrm_marginal_loglik",
    "dpsrm_marginal_grads",
    "fit_mnsrm",
    "fit_dpsrm",
    "mn_heldout_score",
]

_PHI_MAX = 0.99


@dataclass
class MnModel:
    """Fitted matrix-variate shared response model.

    For the "mnsrm" variant `s` holds the posterior mean of the shared
    response and `sigma_s` its prior covariance; for "dpsrm" `s` is the
    fitted parameter, `sigma_w` the basis row covariance, and `w` holds
    per-subject posterior means.
    """

    variant: str
    w: list
    mu: list
    s: np.ndarray
    sigma_t: CovarianceSpec
    sigma_v: CovarianceSpec
    sigma_s: np.ndarray | None = None
    sigma_w: np.ndarray | None = None
    loglik_trace: list = field(default_factory=list)
    converged: bool = True
    flagged: bool = False
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("mnsrm", "dpsrm"):
            raise BadSpec(f"unknown variant {self.variant!r}")
        if not isinstance(self.sigma_t, CovarianceSpec) \
                or not isinstance(self.sigma_v, CovarianceSpec):
            raise BadSpec("sigma_t and sigma_v must be CovarianceSpec")
        k, t = np.shape(self.s)
        for w_m, mu_m in zip(self.w, self.mu):
            if np.shape(w_m)[1] != k or np.shape(w_m)[0] != np.shape(mu_m)[0]:
                raise DimensionMismatch("subject basis/mean shapes disagree")
        for name in ("sigma_s", "sigma_w"):
            mat = getattr(self, name)
            if mat is not None and np.shape(mat) != (k, k):
                raise DimensionMismatch(f"{name} must be {k} x {k}")

    @property
    def n_factors(self):
        return np.shape(self.s)[0]


def _subject_matrices(datasets):
    """Datasets (T x V each) as V x T arrays, validated for equal T."""
    if isinstance(datasets, np.ndarray) and datasets.ndim == 2:
        datasets = [datasets]
    ys = []
    t_ref = None
    for i, x in enumerate(datasets):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise BadShape(f"dataset {i} must be 2-d, got {x.shape}")
        if t_ref is None:
            t_ref = x.shape[0]
        elif x.shape[0] != t_ref:
            raise DimensionMismatch("datasets disagree on timepoint count")
        ys.append(np.ascontiguousarray(x.T))
    if not ys:
        raise BadShape("need at least one dataset")
    return ys, t_ref


def mnsrm_marginal_loglik(datasets, model):
    """Marginal log-likelihood with the shared response integrated out.

    Subjects stack on the voxel axis: the covariance of the stacked,
    mean-centered data is I_T (x) (W Sigma_s W^T) + Sigma_t (x) Sigma_v
    with Sigma_v tiled across subjects.
    """
    ys, t = _subject_matrices(datasets)
    if len(ys) != len(model.w):
        raise DimensionMismatch("dataset/subject count mismatch")
    y = np.vstack([y_m - mu[:, None]
                   for y_m, mu in zip(ys, (np.asarray(m) for m in model.mu))])
    w = np.vstack(model.w)
    if w.shape[0] != y.shape[0]:
        raise DimensionMismatch("stacked basis does not match stacked data")
    r1 = w @ model.sigma_s @ w.T
    d_v = np.diag(model.sigma_v.materialize(ys[0].shape[0]))
    r2 = Diagonal(np.tile(d_v, len(ys)))
    return kron_sum_mvn_logpdf(y, None, (r1, np.eye(t)),
                               (r2, model.sigma_t))


def dpsrm_marginal_loglik(datasets, model):
    """Marginal log-likelihood with the subject bases integrated out.

    Per subject, vec of the mean-centered V x T matrix is Gaussian with
    covariance (S^T Sigma_w S) (x) I_V + Sigma_t (x) Sigma_v; subjects
    are independent and their terms sum.
    """
    ys, t = _subject_matrices(datasets)
    if len(ys) != len(model.mu):
        raise DimensionMismatch("dataset/subject count mismatch")
    c1 = model.s.T @ model.sigma_w @ model.s
    total = 0.0
    for y_m, mu in zip(ys, model.mu):
        total += kron_sum_mvn_logpdf(
            y_m - np.asarray(mu)[:, None], None,
            (ScaledIdentity(1.0), c1), (model.sigma_v, model.sigma_t))
    return float(total)


def _ar1_phi_grad_matrix(t, phi):
    """d Sigma_t / d phi for the unit-variance AR(1) family."""
    lag = np.abs(np.subtract.outer(np.arange(t), np.arange(t)))
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(lag >= 2, float(phi) ** np.maximum(lag - 1, 1), 0.0)
    base[lag == 1] = 1.0
    return lag * base


def dpsrm_marginal_grads(datasets, s, chol_w, mu, log_voxel_var, atanh_phi):
    """Marginal log-likelihood and gradients in fitting coordinates.

    Coordinates: shared response `s` (K x T), lower-triangular factor
    of Sigma_w (entries above the diagonal ignored), per-subject means,
    log per-voxel residual variances, and atanh of the AR(1)
    coefficient (Sigma_t has unit variance).  Returns (value, grads)
    with grads keyed "s", "chol_w", "mu" (list), "log_voxel_var",
    "atanh_phi".
    """
    ys, t = _subject_matrices(datasets)
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != t:
        raise BadShape(f"shared response must be K x {t}, got {s.shape}")
    k = s.shape[0]
    ell = np.tril(np.asarray(chol_w, dtype=np.float64))
    if ell.shape != (k, k):
        raise BadShape(f"chol_w must be {k} x {k}")
    d_v = np.exp(np.asarray(log_voxel_var, dtype=np.float64))
    phi = float(np.tanh(atanh_phi))
    sigma_w = ell @ ell.T
    sigma_v = Diagonal(d_v)
    sigma_t = AR1(1.0, phi)
    c1 = s.T @ sigma_w @ s
    dphi_mat = _ar1_phi_grad_matrix(t, phi)

    value = 0.0
    g_s = np.zeros_like(s)
    g_sigma_w = np.zeros((k, k))
    g_logd = np.zeros_like(d_v)
    g_phi = 0.0
    g_mu = []
    for y_m, mu_m in zip(ys, mu):
        val, grads = kron_sum_mvn_logpdf_grads(
            y_m - np.asarray(mu_m, dtype=np.float64)[:, None], None,
            (ScaledIdentity(1.0), c1), (sigma_v, sigma_t))
        value += val
        gc1 = grads["C1"]
        g_s += 2.0 * sigma_w @ s @ gc1
        g_sigma_w += s @ gc1 @ s.T
        g_logd += np.diag(grads["R2"]) * d_v
        g_phi += float(np.sum(grads["C2"] * dphi_mat))
        # shift invariance: grad wrt mu equals the mean gradient's row sums
        g_mu.append(grads["M"].sum(axis=1))
    return float(value), {
        "s": g_s,
        "chol_w": np.tril(2.0 * g_sigma_w @ ell),
        "mu": g_mu,
        "log_voxel_var": g_logd,
        "atanh_phi": g_phi * (1.0 - phi**2),
    }


# ---------------------------------------------------------------------------
# shared-response variant: expectation-conditional-maximization
#
# The posterior over S given all subjects has precision
# I_T (x) Sigma_s^{-1} + Sigma_t^{-1} (x) A with A = sum_m W_m' D^{-1} W_m.
# With B = L_s U from the eigendecomposition L_s' A L_s = U diag(d) U' and
# Sigma_t = V_t diag(lam) V_t', the posterior diagonalizes on the
# (factor j, eigen-time nu) grid with precisions 1 + d_j / lam_nu.


def _spd_floor(mat, floor=1e-10):
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _init_from_deterministic(ys, k, seed):
    datasets = [y.T for y in ys]
    det, _ = fit_srm_deterministic(datasets, k, seed=seed)
    w0 = [np.asarray(w) for w in det.W]
    s0 = np.asarray(det.s_hat)
    mu = [y.mean(axis=1) for y in ys]
    resid = [y - mu_m[:, None] - w_m @ s0
             for y, mu_m, w_m in zip(ys, mu, w0)]
    d_v = np.maximum(
        np.mean([r.var(axis=1) for r in resid], axis=0), 1e-8)
    num = sum(float(np.sum(r[:, 1:] * r[:, :-1])) for r in resid)
    den = sum(float(np.sum(r * r)) for r in resid)
    phi0 = float(np.clip(num / max(den, 1e-300), -0.9, 0.9))
    sigma_s_raw = s0 @ s0.T / s0.shape[1]
    sigma_s_raw += (1e-6 * max(np.trace(sigma_s_raw), 1e-12) / k) * np.eye(k)
    c = float(np.trace(sigma_s_raw))
    sigma_s = sigma_s_raw / c
    w0 = [w_m * np.sqrt(c) for w_m in w0]
    s0 = s0 / np.sqrt(c)
    return w0, s0, mu, d_v, phi0, sigma_s


def fit_mnsrm(datasets, k, max_iters=50, tol=1e-6, seed=0):
    """Fit the shared-response variant by ECM.

    Each sweep takes the exact Gaussian posterior over S, then
    conditionally maximizes W_m, mu_m, Sigma_v (diagonal, shared across
    subjects), the AR(1) coefficient of unit-variance Sigma_t (with the
    profiled scale folded into Sigma_v), and Sigma_s (unit-trace, scale
    compensated in W_m).  The marginal log-likelihood trace is
    non-decreasing.
    """
    ys, t = _subject_matrices(datasets)
    v = ys[0].shape[0]
    if any(y.shape[0] != v for y in ys):
        raise DimensionMismatch(
            "shared diagonal Sigma_v requires equal voxel counts")
    if k < 1 or k > min(v, t):
        raise BadSpec(f"need 1 <= K <= min(V, T), got K={k}")
    m_subj = len(ys)

    w, s_bar, mu, d_v, phi, sigma_s = _init_from_deterministic(ys, k, seed)

    def current_model():
        return MnModel(variant="mnsrm", w=[w_m.copy() for w_m in w],
                       mu=[mu_m.copy() for mu_m in mu], s=s_bar.copy(),
                       sigma_t=AR1(1.0, phi), sigma_v=Diagonal(d_v.copy()),
                       sigma_s=sigma_s.copy())

    trace = [mnsrm_marginal_loglik(datasets, current_model())]
    converged = False
    for _ in range(max_iters):
        # E-step: posterior over S on the (factor, eigen-time) grid
        d_inv = 1.0 / d_v
        a_mat = sum((w_m * d_inv[:, None]).T @ w_m for w_m in w)
        sigma_t_dense = AR1(1.0, phi).materialize(t)
        lam, v_t = np.linalg.eigh(sigma_t_dense)
        lam = np.maximum(lam, 1e-12)
        t_inv = (v_t / lam) @ v_t.T
        l_s = cholesky_logdet(_spd_floor(sigma_s)).L
        d_j, u_s = np.linalg.eigh(l_s.T @ a_mat @ l_s)
        d_j = np.maximum(d_j, 0.0)
        b_mat = l_s @ u_s
        den = 1.0 + np.outer(d_j, 1.0 / lam)        # (K, T) over (j, nu)
        g_mat = sum(w_m.T @ (d_inv[:, None] * (y_m - mu_m[:, None])) @ t_inv
                    for w_m, y_m, mu_m in zip(w, ys, mu))
        s_bar = b_mat @ ((b_mat.T @ g_mat @ v_t) / den) @ v_t.T
        corr_ss = np.sum(1.0 / den, axis=1)
        corr_sts = np.sum((1.0 / lam) / den, axis=1)
        e_sts = s_bar @ t_inv @ s_bar.T + (b_mat * corr_sts) @ b_mat.T
        phi_t = (b_mat * corr_sts) @ b_mat.T
        e_ss = s_bar @ s_bar.T + (b_mat * corr_ss) @ b_mat.T

        # CM: subject bases and means
        st_inv = t_inv @ s_bar.T                    # (T, K)
        cf = scipy.linalg.cho_factor(e_sts)
        for i in range(m_subj):
            w[i] = scipy.linalg.cho_solve(
                cf, ((ys[i] - mu[i][:, None]) @ st_inv).T).T
        t_one = t_inv @ np.ones(t)
        denom_mu = float(np.ones(t) @ t_one)
        for i in range(m_subj):
            mu[i] = (ys[i] - w[i] @ s_bar) @ t_one / denom_mu

        # CM: voxel variances
        resid = [y_m - w_m @ s_bar - mu_m[:, None]
                 for y_m, w_m, mu_m in zip(ys, w, mu)]
        diag_e = sum(np.einsum("vt,vt->v", r @ t_inv, r) for r in resid)
        diag_e += sum(np.einsum("vk,vk->v", w_m @ phi_t, w_m) for w_m in w)
        d_v = np.maximum(diag_e / (m_subj * t), 1e-10)

        # CM: AR(1) coefficient with the profiled scale folded into Sigma_v
        d_inv = 1.0 / d_v
        a_new = sum((w_m * d_inv[:, None]).T @ w_m for w_m in w)
        p_j = np.einsum("jk,kl,lj->j", b_mat.T, a_new, b_mat)
        kappa = np.sum(p_j[:, None] / den, axis=0)  # per eigen-time nu
        c_e = sum(r.T @ (d_inv[:, None] * r) for r in resid)
        c_e += (v_t * kappa) @ v_t.T
        t0 = float(np.trace(c_e))
        t1s = float(np.trace(c_e)) - c_e[0, 0] - c_e[-1, -1]
        t2 = 2.0 * float(np.sum(np.diagonal(c_e, offset=1)))
        mvt = m_subj * v * t

        def profile(ph):
            g = (t0 + ph * ph * t1s - ph * t2) / (1.0 - ph * ph)
            if g <= 0:
                return np.inf
            return mvt * np.log(g) \
                + m_subj * v * (t - 1) * np.log(1.0 - ph * ph)

        res = minimize_scalar(profile, bounds=(-_PHI_MAX, _PHI_MAX),
                              method="bounded",
                              options={"xatol": 1e-7})
        phi_new = float(res.x) if profile(float(res.x)) <= profile(phi) \
            else phi
        g_val = (t0 + phi_new**2 * t1s - phi_new * t2) / (1.0 - phi_new**2)
        d_v = d_v * (g_val / mvt)
        phi = phi_new

        # CM: shared-response covariance, unit trace
        sigma_s_raw = e_ss / t
        c = float(np.trace(sigma_s_raw))
        if c <= 0:
            raise SolverFailure("shared-response covariance collapsed")
        sigma_s = sigma_s_raw / c
        root = np.sqrt(c)
        w = [w_m * root for w_m in w]
        s_bar = s_bar / root

        trace.append(mnsrm_marginal_loglik(datasets, current_model()))
        if trace[-1] - trace[-2] <= tol * max(abs(trace[-2]), 1.0):
            converged = True
            break

    model = current_model()
    model.loglik_trace = trace
    model.converged = converged
    model.metrics = {"training_rmse": [mn_heldout_score(model, y.T)[0]
                                       for y in ys]}
    return model


# ---------------------------------------------------------------------------
# dual-probabilistic variant: marginal gradient ascent


def _pack_dpsrm(s, ell, mu, log_d, eta, k, t, v, m_subj):
    idx = np.tril_indices(k)
    return np.concatenate([s.ravel(), ell[idx],
                           np.concatenate(mu), log_d, [eta]])


def _unpack_dpsrm(vec, k, t, v, m_subj):
    idx = np.tril_indices(k)
    n_l = len(idx[0])
    pos = k * t
    s = vec[:pos].reshape(k, t)
    ell = np.zeros((k, k))
    ell[idx] = vec[pos:pos + n_l]
    pos += n_l
    mu = [vec[pos + i * v:pos + (i + 1) * v] for i in range(m_subj)]
    pos += m_subj * v
    log_d = vec[pos:pos + v]
    eta = vec[pos + v]
    return s, ell, mu, log_d, eta


def _posterior_basis(ys, mu, s, sigma_w, d_v, phi):
    """Posterior-mean subject bases with the shared parameters frozen."""
    k, t = s.shape
    sigma_t_dense = AR1(1.0, phi).materialize(t)
    cf_t = cholesky_logdet(sigma_t_dense)
    st = scipy.linalg.cho_solve((cf_t.L, True), s.T)      # Sigma_t^{-1} S'
    q = s @ st                                            # S Sigma_t^{-1} S'
    w_prior_inv = np.linalg.inv(
        sigma_w + 1e-12 * max(np.trace(sigma_w), 1.0) * np.eye(k))
    systems = q[None, :, :] / d_v[:, None, None] \
        + w_prior_inv[None, :, :]
    out = []
    for y_m, mu_m in zip(ys, mu):
        rhs = ((y_m - mu_m[:, None]) @ st) / d_v[:, None]
        out.append(np.linalg.solve(systems, rhs[..., None])[..., 0])
    return out


def _revive_dead_factors(ys, s, ell, mu, log_d, eta, rel=1e-3):
    """Restart directions whose basis variance collapsed to zero.

    A factor whose Sigma_w eigenvalue hits zero stops contributing to
    the marginal, so its gradient vanishes and gradient ascent cannot
    recover it.  Rotate (S, Sigma_w) to the eigenbasis of Sigma_w (a
    likelihood-invariant reparameterization), replace the rows whose
    eigenvalue fell below ``rel`` times the largest with the leading
    principal time courses of the pooled residual, and hand back a
    restart point; None when every factor is live.
    """
    sigma_w = np.tril(ell) @ np.tril(ell).T
    evals, u = np.linalg.eigh(sigma_w)
    top = float(evals[-1])
    if top <= 0:
        return None
    dead = evals < rel * top
    if not np.any(dead):
        return None
    d_v = np.exp(log_d)
    phi = float(np.tanh(eta))
    w_bar = _posterior_basis(ys, mu, s, sigma_w, d_v, phi)
    resid = np.vstack([y - mu_m[:, None] - w_m @ s
                       for y, mu_m, w_m in zip(ys, mu, w_bar)])
    _, _, vt = np.linalg.svd(resid, full_matrices=False)
    s_rot = u.T @ s
    live = ~dead
    if np.any(live):
        target_sd = max(float(np.median(s_rot[live].std(axis=1))), 1e-6)
        fill = 0.25 * float(np.median(evals[live]))
    else:
        target_sd = 1.0
        fill = top
    new_evals = evals.copy()
    for slot, j in enumerate(np.flatnonzero(dead)):
        course = vt[slot]
        s_rot[j] = course * (target_sd / max(float(course.std()), 1e-12))
        new_evals[j] = fill
    ell_new = np.diag(np.sqrt(np.maximum(new_evals, 1e-12)))
    return s_rot, ell_new


def fit_dpsrm(datasets, k, max_iters=200, tol=1e-9, seed=0):
    """Fit the dual-probabilistic variant by marginal gradient ascent.

    Optimizes S, the factor of Sigma_w, per-subject means, log voxel
    variances, and atanh phi jointly with L-BFGS-B.  If any factor's
    basis variance collapses to zero during the first run, the dead
    directions are restarted from residual principal time courses and a
    second run is attempted; the restart is kept only when it improves
    the objective, and its steps enter the trace from the point they
    first pass the previous optimum, so loglik_trace is monotone
    non-decreasing throughout.  Sigma_w is normalized to unit trace
    afterwards (scale moved into S).
    """
    ys, t = _subject_matrices(datasets)
    v = ys[0].shape[0]
    if any(y.shape[0] != v for y in ys):
        raise DimensionMismatch(
            "shared diagonal Sigma_v requires equal voxel counts")
    if k < 1 or k > min(v, t):
        raise BadSpec(f"need 1 <= K <= min(V, T), got K={k}")
    m_subj = len(ys)

    _, s, mu, d_v, phi0, _ = _init_from_deterministic(ys, k, seed)
    # rows of an orthonormal-column basis have covariance close to I/V
    ell = np.eye(k) / np.sqrt(v)
    log_d = np.log(d_v)
    eta = float(np.arctanh(np.clip(phi0, -0.9, 0.9)))

    datasets_list = [y.T for y in ys]

    def objective(vec):
        s_c, ell_c, mu_c, log_d_c, eta_c = _unpack_dpsrm(
            vec, k, t, v, m_subj)
        val, grads = dpsrm_marginal_grads(
            datasets_list, s_c, ell_c, mu_c, log_d_c, eta_c)
        grad = _pack_dpsrm(grads["s"], grads["chol_w"], grads["mu"],
                           grads["log_voxel_var"], grads["atanh_phi"],
                           k, t, v, m_subj)
        return -val, -grad

    x0 = _pack_dpsrm(s, ell, mu, log_d, eta, k, t, v, m_subj)
    z_max = float(np.arctanh(_PHI_MAX))
    d_mid = float(np.median(log_d))
    n_head = k * t + k * (k + 1) // 2 + m_subj * v
    bounds = ([(None, None)] * n_head
              + [(d_mid - 12.0, d_mid + 12.0)] * v
              + [(-z_max, z_max)])

    def run_round(x_start):
        round_trace = [-float(objective(x_start)[0])]

        def record(intermediate_result):
            round_trace.append(-float(intermediate_result.fun))

        res = minimize(objective, x_start, jac=True, method="L-BFGS-B",
                       bounds=bounds, callback=record,
                       options={"maxiter": max_iters, "ftol": tol,
                                "gtol": 1e-8, "maxcor": 20})
        if -float(res.fun) > round_trace[-1]:
            round_trace.append(-float(res.fun))
        return res, round_trace

    res, trace = run_round(x0)
    s, ell, mu, log_d, eta = _unpack_dpsrm(res.x, k, t, v, m_subj)
    revived = _revive_dead_factors(ys, s, ell, mu, log_d, eta)
    if revived is not None:
        s_rev, ell_rev = revived
        x1 = _pack_dpsrm(s_rev, ell_rev, mu, log_d, eta, k, t, v, m_subj)
        res2, trace2 = run_round(x1)
        if -float(res2.fun) > trace[-1]:
            # accepted-step values of the inner run are monotone, so
            # this keeps exactly the suffix past the previous optimum
            trace = trace + [val for val in trace2 if val >= trace[-1]]
            res = res2
            s, ell, mu, log_d, eta = _unpack_dpsrm(res.x, k, t, v, m_subj)
    ell = np.tril(ell)
    sigma_w = ell @ ell.T
    c = float(np.trace(sigma_w))
    if c <= 0:
        raise SolverFailure("basis covariance collapsed to zero")
    sigma_w = sigma_w / c
    s = s * np.sqrt(c)
    d_v = np.exp(log_d)
    phi = float(np.tanh(eta))

    # posterior mean of each subject's basis under the fitted parameters
    w_post = _posterior_basis(ys, mu, s, sigma_w, d_v, phi)

    model = MnModel(variant="dpsrm", w=w_post, mu=[np.asarray(m) for m in mu],
                    s=s, sigma_t=AR1(1.0, phi), sigma_v=Diagonal(d_v),
                    sigma_w=sigma_w, loglik_trace=trace,
                    converged=bool(res.success))
    model.metrics = {"training_rmse": [mn_heldout_score(model, y.T)[0]
                                       for y in ys]}
    return model


def mn_heldout_score(model, x_new):
    """Score a new subject: fit its basis on the first time half, then
    reconstruct the second half.

    The basis and mean are fit by generalized least squares against the
    model's shared response, weighted by Sigma_t restricted to the
    fitted half (flat prior on the basis for both variants).  Returns
    (reconstruction RMSE on the held-out half, log-density of the
    held-out half at the fitted subject parameters).
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2:
        raise BadShape(f"new subject data must be 2-d, got {x_new.shape}")
    y = x_new.T
    k, t = model.s.shape
    if y.shape[1] != t:
        raise DimensionMismatch(
            f"new subject has {y.shape[1]} timepoints, model has {t}")
    t1 = t // 2
    if t1 <= k + 1:
        raise BadSpec("not enough timepoints to fit and hold out")
    sigma_t_dense = model.sigma_t.materialize(t)
    block1 = sigma_t_dense[:t1, :t1]
    l1 = cholesky_logdet(block1).L
    s_aug = np.vstack([model.s[:, :t1], np.ones(t1)])
    b = scipy.linalg.solve_triangular(l1, s_aug.T, lower=True)
    c = scipy.linalg.solve_triangular(l1, y[:, :t1].T, lower=True)
    gram = b.T @ b
    w_aug = np.linalg.solve(gram, b.T @ c).T
    w_new, mu_new = w_aug[:, :k], w_aug[:, k]

    recon = w_new @ model.s[:, t1:] + mu_new[:, None]
    resid = y[:, t1:] - recon
    rmse = float(np.sqrt(np.mean(resid**2)))
    block2 = DenseSPD(sigma_t_dense[t1:, t1:])
    loglik = matnormal_logpdf(y[:, t1:], recon, model.sigma_v, block2)
    return rmse, float(loglik)
