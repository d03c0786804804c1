"""Shared response models: deterministic, probabilistic, and the
square-basis alignment baseline.

All variants posit per-subject orthonormal bases W_m mapping a common
latent time series into each subject's voxel space.  The deterministic
fit alternates exact least-squares updates; the probabilistic fit runs
EM on the Gaussian model x_t = W_m s_t + mu_m + noise with
s_t ~ N(0, Sigma_s) and isotropic per-subject noise, where the
orthonormality constraint reduces the E-step to a single K x K solve.
"""

import numpy as np

from ._rng import substream
from .errors import BadShape, DegenerateNoise
from .linalg import cholesky_logdet, orthogonal_procrustes

__all__ = [
    "SrmModel",
    "fit_srm_deterministic",
    "fit_srm_probabilistic",
    "fit_hyperalignment",
    "srm_transform",
    "srm_heldout_score",
]


class SrmModel:
    """Fitted shared response model.

    Fields: ``k``; per subject ``W[m]`` (V_m x K, orthonormal columns),
    ``mu[m]``, ``rho2[m]``; shared ``sigma_s`` (K x K) and ``s_hat``
    (K x T posterior-mean shared series).  The deterministic fit leaves
    ``mu``/``rho2``/``sigma_s`` as None.
    """

    def __init__(self, k, W, mu=None, rho2=None, sigma_s=None, s_hat=None):
        self.k = int(k)
        self.W = [np.asarray(w, dtype=np.float64) for w in W]
        for w in self.W:
            if w.shape[1] != self.k:
                raise BadShape("every W_m must have K columns")
            gram = w.T @ w
            if np.max(np.abs(gram - np.eye(self.k))) >= 1e-8:
                raise BadShape("W_m columns are not orthonormal")
        self.mu = None if mu is None else \
            [np.asarray(v, dtype=np.float64) for v in mu]
        self.rho2 = None if rho2 is None else [float(r) for r in rho2]
        self.sigma_s = None if sigma_s is None else \
            np.asarray(sigma_s, dtype=np.float64)
        self.s_hat = None if s_hat is None else \
            np.asarray(s_hat, dtype=np.float64)

    @property
    def n_subjects(self):
        return len(self.W)


def _check_datasets(datasets, K):
    data = [np.asarray(X, dtype=np.float64) for X in datasets]
    if not data:
        raise BadShape("need at least one dataset")
    T = data[0].shape[0]
    for X in data:
        if X.ndim != 2:
            raise BadShape("datasets must be T x V matrices")
        if X.shape[0] != T:
            raise BadShape("all subjects must share the timepoint count")
        if K > X.shape[1]:
            raise BadShape(f"K={K} exceeds a subject's voxel count "
                           f"{X.shape[1]}")
    if K > T:
        raise BadShape(f"K={K} exceeds timepoint count {T}")
    return data, T


def _init_bases(Ys, K, seed):
    """Thin orthogonal factor of Y_m G for a shared seeded Gaussian G."""
    T = Ys[0].shape[1]
    G = substream(seed, "srm.init").standard_normal((T, K))
    out = []
    for Y in Ys:
        Q, R = np.linalg.qr(Y @ G)
        out.append(Q * np.sign(np.diag(R)))
    return out


def fit_srm_deterministic(datasets, K, max_iters=200, tol=1e-6, seed=0):
    """Alternating least squares for the constrained factorization.

    Minimizes sum_m ||X_m^T - W_m S||_F^2 over orthonormal-column W_m
    and unconstrained S; both block updates are exact, so the objective
    trace is non-increasing.  Returns (model, trace).
    """
    data, T = _check_datasets(datasets, K)
    Ys = [X.T.copy() for X in data]
    M = len(Ys)
    W = _init_bases(Ys, K, seed)

    def objective(W, S):
        return float(sum(np.sum((Y - w @ S) ** 2)
                         for Y, w in zip(Ys, W)))

    S = sum(w.T @ Y for w, Y in zip(W, Ys)) / M
    trace = [objective(W, S)]
    for _ in range(max_iters):
        W = [orthogonal_procrustes(Y @ S.T) for Y in Ys]
        S = sum(w.T @ Y for w, Y in zip(W, Ys)) / M
        trace.append(objective(W, S))
        if trace[-2] - trace[-1] <= tol * max(trace[-2], 1e-30):
            break
    return SrmModel(K, W, s_hat=S), trace


def fit_srm_probabilistic(datasets, K, max_iters=200, tol=1e-6, seed=0,
                          diag_sigma_s=False):
    """EM for the probabilistic shared response model.

    E-step: the posterior over each shared s_t is Gaussian with shared
    covariance (Sigma_s^{-1} + c I)^{-1}, c = sum_m 1/rho_m^2, thanks to
    orthonormal bases.  M-step: W_m by orthogonal Procrustes on the
    expected cross-covariance, mu_m as voxel means, rho_m^2 and Sigma_s
    in closed form.  The marginal log-likelihood trace is
    non-decreasing.  Returns (model, trace).
    """
    data, T = _check_datasets(datasets, K)
    Ys = [X.T.copy() for X in data]
    M = len(Ys)
    V_total = sum(Y.shape[0] for Y in Ys)
    mus = [Y.mean(axis=1) for Y in Ys]
    Rs = [Y - mu[:, None] for Y, mu in zip(Ys, mus)]
    r_sq = [float(np.sum(R * R)) for R in Rs]

    W = _init_bases(Rs, K, seed)
    rho2 = [max(r / (R.shape[0] * T) * 0.5, 1e-12)
            for r, R in zip(r_sq, Rs)]
    sigma_s = np.eye(K)

    def e_step():
        c = sum(1.0 / r for r in rho2)
        Ls = cholesky_logdet(sigma_s)
        V_s = np.linalg.inv(np.linalg.inv(sigma_s) + c * np.eye(K))
        V_s = 0.5 * (V_s + V_s.T)
        G = sum(w.T @ R / r for w, R, r in zip(W, Rs, rho2))
        ES = V_s @ G
        ld = cholesky_logdet(np.eye(K) + c * sigma_s).logdet
        quad = sum(rs / r for rs, r in zip(r_sq, rho2)) \
            - float(np.sum(G * ES))
        ll = -0.5 * V_total * T * np.log(2.0 * np.pi) \
            - 0.5 * T * (sum(Y.shape[0] * np.log(r)
                             for Y, r in zip(Ys, rho2)) + ld) \
            - 0.5 * quad
        del Ls
        return V_s, ES, ll

    trace = []
    for _ in range(max_iters):
        V_s, ES, ll = e_step()
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) \
                <= tol * (1.0 + abs(trace[-2])):
            break
        tr_ess = T * float(np.trace(V_s)) + float(np.sum(ES * ES))
        new_W, new_rho2 = [], []
        for R, rs in zip(Rs, r_sq):
            w = orthogonal_procrustes(R @ ES.T)
            r2 = (rs - 2.0 * float(np.sum(w * (R @ ES.T))) + tr_ess) \
                / (R.shape[0] * T)
            r2 = max(r2, 0.0)
            if r2 < 1e-12:
                raise DegenerateNoise(
                    "a subject's noise variance collapsed below 1e-12; "
                    "the factor count is likely too large for the data")
            new_W.append(w)
            new_rho2.append(r2)
        W, rho2 = new_W, new_rho2
        ess = V_s + ES @ ES.T / T
        if diag_sigma_s:
            sigma_s = np.diag(np.maximum(np.diag(ess), 1e-10))
        else:
            vals, vecs = np.linalg.eigh(0.5 * (ess + ess.T))
            sigma_s = (vecs * np.maximum(vals, 1e-10)) @ vecs.T
            sigma_s = 0.5 * (sigma_s + sigma_s.T)
    V_s, ES, ll = e_step()
    if not trace or ll != trace[-1]:
        trace.append(ll)
    model = SrmModel(K, W, mu=mus, rho2=rho2, sigma_s=sigma_s, s_hat=ES)
    return model, trace


def fit_hyperalignment(datasets, max_iters=200, tol=1e-6):
    """Square-basis alignment to a common template.

    Minimizes sum_m ||W_m^T X_m^T - S||_F^2 over square orthogonal W_m
    by alternating Procrustes alignment and template averaging, started
    from the first subject as template.  Returns (W list, S).
    """
    data = [np.asarray(X, dtype=np.float64) for X in datasets]
    if not data:
        raise BadShape("need at least one dataset")
    T, V = data[0].shape
    for X in data:
        if X.shape != (T, V):
            raise BadShape("square alignment needs equal T x V shapes")
    Ys = [X.T.copy() for X in data]
    M = len(Ys)
    S = Ys[0].copy()
    W = [np.eye(V) for _ in range(M)]
    prev = None
    for _ in range(max_iters):
        W = [orthogonal_procrustes(Y @ S.T, allow_deficient=True)
             for Y in Ys]
        S = sum(w.T @ Y for w, Y in zip(W, Ys)) / M
        obj = float(sum(np.sum((w.T @ Y - S) ** 2)
                        for w, Y in zip(W, Ys)))
        if prev is not None and prev - obj <= tol * max(prev, 1e-30):
            break
        prev = obj
    return W, S


def srm_transform(model, X, m):
    """Project one subject's data into the shared space: W_m^T(X^T - mu)."""
    X = np.asarray(X, dtype=np.float64)
    W = model.W[m]
    if X.ndim != 2 or X.shape[1] != W.shape[0]:
        raise BadShape(f"data must be T' x {W.shape[0]}, got {X.shape}")
    Y = X.T
    if model.mu is not None:
        Y = Y - model.mu[m][:, None]
    return W.T @ Y


def srm_heldout_score(model, X_new):
    """Reconstruction RMSE on a held-out time half for a new subject.

    Fits the new subject's basis (and voxel means) against the model's
    shared series on the first half of timepoints, reconstructs the
    second half, and returns the RMSE there.
    """
    X = np.asarray(X_new, dtype=np.float64)
    S = model.s_hat
    if S is None or X.shape[0] != S.shape[1]:
        raise BadShape("new subject must cover the model's timepoints")
    T = X.shape[0]
    half = T // 2
    Y = X.T
    mu = Y[:, :half].mean(axis=1)
    R1 = Y[:, :half] - mu[:, None]
    W = orthogonal_procrustes(R1 @ S[:, :half].T)
    pred = W @ S[:, half:] + mu[:, None]
    return float(np.sqrt(np.mean((Y[:, half:] - pred) ** 2)))
