"""Topographic factor analysis, single-subject and hierarchical.

Each latent factor is a radial basis image over voxel positions,
exp(-||p_v - c_k||^2 / lambda_k), mixed by per-timepoint weights.  The
hierarchical variant shares a global template of centers and widths
that every subject perturbs.  Fitting is MAP coordinate descent:

  * weights by ridge regression with the weight prior as target,
  * centers/widths by bounded nonlinear least squares (trust-region
    reflective) with the template acting through Gaussian priors,
  * the template by exact conjugate Gaussian posterior updates.

The tracked objective is the full negative log-posterior up to
constants (data term plus weight, center, width, and template prior
terms), so it is non-increasing across accepted sweeps.
"""

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import least_squares

from ._parallel import ordered_map
from ._rng import substream
from .errors import BadShape, BadSpec, NonPositiveWidth, NotSPD
from .report import FitReport

__all__ = [
    "VoxelGrid",
    "HtfaGlobalTemplate",
    "HtfaSubjectModel",
    "rbf_factor",
    "factor_matrix",
    "tfa_weight_step",
    "tfa_local_step",
    "htfa_global_step",
    "htfa_map_objective",
    "fit_htfa",
    "node_connectivity",
    "isfc",
]


@dataclass(frozen=True)
class VoxelGrid:
    """Voxel positions, one 3-D coordinate per voxel (voxel units)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise BadShape(f"positions must be V x 3, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise BadSpec("positions must be finite")
        if np.unique(pos, axis=0).shape[0] != pos.shape[0]:
            raise BadSpec("positions contain duplicate coordinates")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def regular(cls, shape, spacing=1.0):
        """Full lattice of the given shape, e.g. (10, 10, 10)."""
        axes = [spacing * np.arange(n, dtype=np.float64) for n in shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(np.stack([m.ravel() for m in mesh], axis=1))

    @property
    def n_voxels(self):
        return self.positions.shape[0]

    def extent(self):
        """Length of the bounding-box diagonal."""
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass(frozen=True)
class HtfaGlobalTemplate:
    """Template centers/widths and their Gaussian hyperpriors.

    Hyperprior covariances are isotropic: ``center_prior_var[k]`` is
    the per-axis variance of center k's prior, ``width_prior_var[k]``
    the variance of its scalar width prior.
    """

    centers: np.ndarray       # K x 3
    widths: np.ndarray        # K, all > 0
    center_prior_mean: np.ndarray
    center_prior_var: np.ndarray
    width_prior_mean: np.ndarray
    width_prior_var: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise BadShape(f"centers must be K x 3, got {c.shape}")
        k = c.shape[0]
        w = np.asarray(self.widths, dtype=np.float64).reshape(k)
        if np.any(w <= 0):
            raise NonPositiveWidth("template widths must be > 0")
        cpm = np.asarray(self.center_prior_mean, dtype=np.float64)
        cpm = np.broadcast_to(cpm, (k, 3)).copy()
        cpv = np.broadcast_to(np.asarray(self.center_prior_var,
                                         dtype=np.float64), (k,)).copy()
        wpm = np.broadcast_to(np.asarray(self.width_prior_mean,
                                         dtype=np.float64), (k,)).copy()
        wpv = np.broadcast_to(np.asarray(self.width_prior_var,
                                         dtype=np.float64), (k,)).copy()
        if np.any(cpv <= 0) or np.any(wpv <= 0):
            raise BadSpec("hyperprior variances must be > 0")
        for name, val in (("centers", c), ("widths", w),
                          ("center_prior_mean", cpm),
                          ("center_prior_var", cpv),
                          ("width_prior_mean", wpm),
                          ("width_prior_var", wpv)):
            object.__setattr__(self, name, val)

    @property
    def k_factors(self):
        return self.centers.shape[0]


@dataclass(frozen=True)
class HtfaSubjectModel:
    """One subject's factor parameters, weights, and noise/prior scales.

    ``center_scale`` is the per-axis variance of the subject's center
    perturbation around the template; ``width_scale`` the variance of
    the width perturbation; ``phi`` the subsampling coefficient that
    divides both prior precisions in the local objective.
    """

    centers: np.ndarray       # K x 3
    widths: np.ndarray        # K
    W: np.ndarray             # T x K weights
    gamma2: float             # observation noise variance
    center_scale: float
    width_scale: float
    phi: float = 1.0
    weight_mean: np.ndarray = None   # K, default zeros
    weight_var: float = 100.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise BadShape(f"centers must be K x 3, got {c.shape}")
        k = c.shape[0]
        w = np.asarray(self.widths, dtype=np.float64).reshape(k)
        if np.any(w <= 0):
            raise NonPositiveWidth("subject widths must be > 0")
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[1] != k:
            raise BadShape(f"W must be T x {k}, got {W.shape}")
        if not self.gamma2 > 0:
            raise BadSpec("gamma2 must be > 0")
        if not 0 < self.phi <= 1:
            raise BadSpec("phi must be in (0, 1]")
        if not (self.center_scale > 0 and self.width_scale > 0
                and self.weight_var > 0):
            raise BadSpec("prior scales must be > 0")
        wm = np.zeros(k) if self.weight_mean is None else \
            np.broadcast_to(np.asarray(self.weight_mean,
                                       dtype=np.float64), (k,)).copy()
        for name, val in (("centers", c), ("widths", w), ("W", W),
                          ("weight_mean", wm)):
            object.__setattr__(self, name, val)

    @property
    def k_factors(self):
        return self.centers.shape[0]


def _positions_of(grid):
    if isinstance(grid, VoxelGrid):
        return grid.positions
    return VoxelGrid(np.asarray(grid, dtype=np.float64)).positions


def rbf_factor(center, width, grid):
    """Radial basis image: entry v = exp(-||p_v - center||^2 / width)."""
    if not width > 0:
        raise NonPositiveWidth(f"width must be > 0, got {width}")
    pos = _positions_of(grid)
    d2 = np.sum((pos - np.asarray(center, dtype=np.float64)) ** 2, axis=1)
    return np.exp(-d2 / width)


def factor_matrix(centers, widths, positions):
    """K x V matrix stacking one radial-basis row per factor."""
    centers = np.asarray(centers, dtype=np.float64)
    widths = np.asarray(widths, dtype=np.float64)
    if np.any(widths <= 0):
        raise NonPositiveWidth("widths must be > 0")
    d2 = np.sum((positions[None, :, :] - centers[:, None, :]) ** 2, axis=2)
    return np.exp(-d2 / widths[:, None])


def tfa_weight_step(X, F, gamma2, weight_mean=None, weight_var=1.0):
    """Ridge solve for the weights with the prior mean as target.

    W = (X F^T + tau mu_w 1^T)(F F^T + tau I)^{-1}, tau = gamma2 /
    weight_var.  tau -> 0 recovers least squares onto the factor rows;
    tau -> inf pins W to the prior mean.
    """
    X = np.asarray(X, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if X.ndim != 2 or F.ndim != 2 or X.shape[1] != F.shape[1]:
        raise BadShape(f"X {X.shape} and F {F.shape} must share the "
                       "voxel axis")
    k = F.shape[0]
    tau = float(gamma2) / float(weight_var)
    A = F @ F.T + tau * np.eye(k)
    B = X @ F.T
    if weight_mean is not None and tau > 0:
        B = B + tau * np.broadcast_to(np.asarray(weight_mean,
                                                 dtype=np.float64), (k,))
    try:
        cf = cho_factor(A, lower=True)
    except LinAlgError as exc:
        raise NotSPD(f"ridge system is not positive definite: {exc}") from exc
    return cho_solve(cf, B.T).T


def _subject_objective(X, W, F, subject, template, data_scale=1.0):
    """Negative log-posterior terms owned by one subject (up to consts)."""
    resid = X - W @ F
    f = data_scale * float(np.sum(resid * resid)) / (2.0 * subject.gamma2)
    dw = W - subject.weight_mean[None, :]
    f += float(np.sum(dw * dw)) / (2.0 * subject.weight_var)
    dc = subject.centers - template.centers
    f += float(np.sum(dc * dc)) / (2.0 * subject.phi * subject.center_scale)
    dl = subject.widths - template.widths
    f += float(np.sum(dl * dl)) / (2.0 * subject.phi * subject.width_scale)
    return f


def _template_prior(template):
    dc = template.centers - template.center_prior_mean
    f = float(np.sum(np.sum(dc * dc, axis=1) /
                     (2.0 * template.center_prior_var)))
    dl = template.widths - template.width_prior_mean
    f += float(np.sum(dl * dl / (2.0 * template.width_prior_var)))
    return f


def htfa_map_objective(datasets, subjects, template, grid):
    """Total MAP objective: subject terms plus the template's own prior."""
    pos = _positions_of(grid)
    f = _template_prior(template)
    for X, sub in zip(datasets, subjects):
        F = factor_matrix(sub.centers, sub.widths, pos)
        f += _subject_objective(np.asarray(X, dtype=np.float64),
                                sub.W, F, sub, template)
    return f


def _center_bounds(pos):
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    span = np.maximum(hi - lo, 1.0)
    return lo - 0.5 * span, hi + 0.5 * span


def tfa_local_step(X, grid, subject, template, max_nfev=50,
                   voxel_idx=None, time_idx=None):
    """Refine one subject's centers/widths, then refresh its weights.

    Centers and log-widths move by bounded trust-region-reflective
    least squares on the local objective with W fixed; the weights are
    then re-solved in closed form on the full data.  Returns
    ``(updated_subject, accepted)``; a candidate that fails to lower
    the exact objective is rejected (weights still refreshed), so the
    combined step never increases the objective when no subsampling is
    active.  With ``voxel_idx``/``time_idx`` the least-squares stage
    sees only that subsample and acceptance is not checked.
    """
    X = np.asarray(X, dtype=np.float64)
    pos = _positions_of(grid)
    if X.shape[1] != pos.shape[0]:
        raise BadShape(f"data has {X.shape[1]} voxels, grid has "
                       f"{pos.shape[0]}")
    if subject.k_factors != template.k_factors:
        raise BadShape("subject and template disagree on factor count")
    K = subject.k_factors
    subsampled = voxel_idx is not None or time_idx is not None
    Xs = X if time_idx is None else X[time_idx]
    Ws = subject.W if time_idx is None else subject.W[time_idx]
    pos_s = pos
    if voxel_idx is not None:
        Xs = Xs[:, voxel_idx]
        pos_s = pos[voxel_idx]
    V = pos_s.shape[0]

    G = Ws.T @ Ws
    G = G + (1e-12 * max(float(np.trace(G)), 1.0)) * np.eye(K)
    L_W = np.linalg.cholesky(G)
    F0 = np.linalg.solve(G, Ws.T @ Xs)
    gamma = np.sqrt(subject.gamma2)
    c_sd = np.sqrt(subject.phi * subject.center_scale)
    l_sd = np.sqrt(subject.phi * subject.width_scale)

    lo, hi = _center_bounds(pos)
    extent = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
    log_lo, log_hi = np.log(1e-3), np.log(max(2.0 * extent, 1e-2) ** 2)

    def unpack(x):
        return x[:3 * K].reshape(K, 3), np.exp(x[3 * K:])

    def residuals(x):
        c, lam = unpack(x)
        F = factor_matrix(c, lam, pos_s)
        r = np.empty(K * V + 4 * K)
        r[:K * V] = (L_W.T @ (F - F0)).ravel() / gamma
        r[K * V:K * V + 3 * K] = (c - template.centers).ravel() / c_sd
        r[K * V + 3 * K:] = (lam - template.widths) / l_sd
        return r

    def jacobian(x):
        c, lam = unpack(x)
        d = pos_s[None, :, :] - c[:, None, :]          # K x V x 3
        d2 = np.sum(d * d, axis=2)
        F = np.exp(-d2 / lam[:, None])
        J = np.zeros((K * V + 4 * K, 4 * K))
        for k in range(K):
            dc = F[k][:, None] * (2.0 * d[k] / lam[k])      # V x 3
            dl = F[k] * (d2[k] / lam[k])                    # V (per log-width)
            for j in range(3):
                J[:K * V, 3 * k + j] = np.outer(
                    L_W[k], dc[:, j]).ravel() / gamma
            J[:K * V, 3 * K + k] = np.outer(L_W[k], dl).ravel() / gamma
        idx = np.arange(3 * K)
        J[K * V + idx, idx] = 1.0 / c_sd
        J[K * V + 3 * K + np.arange(K), 3 * K + np.arange(K)] = lam / l_sd
        return J

    x0 = np.concatenate([
        np.clip(subject.centers, lo, hi).ravel(),
        np.clip(np.log(subject.widths), log_lo, log_hi),
    ])
    lower = np.concatenate([np.tile(lo, K), np.full(K, log_lo)])
    upper = np.concatenate([np.tile(hi, K), np.full(K, log_hi)])
    sol = least_squares(residuals, x0, jac=jacobian, bounds=(lower, upper),
                        method="trf", x_scale=1.0, max_nfev=max_nfev)
    cand_c, cand_l = unpack(sol.x)

    accepted = True
    if not subsampled:
        F_old = factor_matrix(subject.centers, subject.widths, pos)
        f_old = _subject_objective(X, subject.W, F_old, subject, template)
        F_new = factor_matrix(cand_c, cand_l, pos)
        cand = replace(subject, centers=cand_c, widths=cand_l)
        if _subject_objective(X, subject.W, F_new, cand, template) \
                > f_old + 1e-12 * max(1.0, abs(f_old)):
            accepted = False
    if not accepted:
        cand_c, cand_l = subject.centers, subject.widths

    F_fin = factor_matrix(cand_c, cand_l, pos)
    W_new = tfa_weight_step(X, F_fin, subject.gamma2,
                            subject.weight_mean, subject.weight_var)
    return replace(subject, centers=cand_c, widths=cand_l, W=W_new), accepted


def htfa_global_step(subjects, template):
    """Exact conjugate posterior update of the template centers/widths.

    Each subject's local center/width is treated as a Gaussian
    observation of the template value with that subject's perturbation
    variance scaled by its subsampling coefficient, combined with the
    template hyperprior.  Widths are floored at 1e-3.
    """
    if len(subjects) < 1:
        raise BadShape("need at least one subject")
    K = template.k_factors
    for sub in subjects:
        if sub.k_factors != K:
            raise BadShape("subject/template factor counts disagree")
    c_prec = 1.0 / template.center_prior_var                       # K
    c_num = template.center_prior_mean * c_prec[:, None]           # K x 3
    w_prec = 1.0 / template.width_prior_var
    w_num = template.width_prior_mean * w_prec
    for sub in subjects:
        pc = 1.0 / (sub.phi * sub.center_scale)
        c_prec = c_prec + pc
        c_num = c_num + pc * sub.centers
        pw = 1.0 / (sub.phi * sub.width_scale)
        w_prec = w_prec + pw
        w_num = w_num + pw * sub.widths
    return replace(template,
                   centers=c_num / c_prec[:, None],
                   widths=np.maximum(w_num / w_prec, 1e-3))


def node_connectivity(W):
    """Pearson correlation between weight columns; unit diagonal.

    Zero-variance columns yield 0 off the diagonal.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise BadShape("W must be T x K")
    C = W - W.mean(axis=0)
    norms = np.linalg.norm(C, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    R = (C.T @ C) / np.outer(safe, safe)
    R[norms == 0, :] = 0.0
    R[:, norms == 0] = 0.0
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def _cross_corr(A, B):
    Ac = A - A.mean(axis=0)
    Bc = B - B.mean(axis=0)
    na = np.linalg.norm(Ac, axis=0)
    nb = np.linalg.norm(Bc, axis=0)
    R = (Ac.T @ Bc) / np.outer(np.where(na > 0, na, 1.0),
                               np.where(nb > 0, nb, 1.0))
    R[na == 0, :] = 0.0
    R[:, nb == 0] = 0.0
    return R


def isfc(W_list):
    """Inter-subject factor connectivity.

    For each subject, correlate its weight columns against the mean of
    the other subjects' weights; average over subjects, symmetrize,
    and force a unit diagonal.
    """
    if len(W_list) < 2:
        raise BadShape("need at least two subjects")
    mats = [np.asarray(W, dtype=np.float64) for W in W_list]
    shape = mats[0].shape
    if any(W.shape != shape for W in mats):
        raise BadShape("all weight matrices must share T x K shape")
    total = np.zeros((shape[1], shape[1]))
    stack = np.stack(mats)
    full_sum = stack.sum(axis=0)
    for m, W in enumerate(mats):
        others = (full_sum - W) / (len(mats) - 1)
        total += _cross_corr(W, others)
    R = total / len(mats)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def _farthest_point_init(datasets, pos, K):
    """Seed centers on high-variance voxels, spread by farthest-point."""
    var_v = np.mean([np.var(np.asarray(X, dtype=np.float64), axis=0)
                     for X in datasets], axis=0)
    cut = np.quantile(var_v, 0.75)
    cand = np.flatnonzero(var_v >= cut)
    if cand.size < K:
        cand = np.arange(pos.shape[0])
    chosen = [cand[int(np.argmax(var_v[cand]))]]
    d_min = np.linalg.norm(pos[cand] - pos[chosen[0]], axis=1)
    while len(chosen) < K:
        nxt = cand[int(np.argmax(d_min))]
        chosen.append(nxt)
        d_min = np.minimum(d_min,
                           np.linalg.norm(pos[cand] - pos[nxt], axis=1))
    return pos[np.array(chosen)].copy()


def fit_htfa(datasets, grid, K, max_iters=20, tol=1e-4, seed=0, phi=1.0,
             gamma2=None, weight_var=100.0, center_scale=None,
             width_scale=None, template=None, max_nfev=50):
    """Alternate per-subject local steps with global template updates.

    Stops when the total MAP objective changes by less than
    ``tol * (1 + |f|)`` over a sweep or after ``max_iters`` sweeps.
    ``phi < 1`` subsamples voxels and timepoints inside each local
    least-squares stage (drawn from the fit seed per sweep/subject).
    Per-subject noise variances are estimated once from the initial
    residual and held fixed.  Returns (template, subjects, report).
    """
    t0 = time.monotonic()
    grid = grid if isinstance(grid, VoxelGrid) else VoxelGrid(grid)
    pos = grid.positions
    V = pos.shape[0]
    data = [np.asarray(X, dtype=np.float64) for X in datasets]
    if not data:
        raise BadShape("need at least one dataset")
    for X in data:
        if X.ndim != 2 or X.shape[1] != V:
            raise BadShape(f"dataset shape {X.shape} does not match grid "
                           f"with {V} voxels")
    if not 1 <= K <= V:
        raise BadSpec(f"need 1 <= K <= {V}")
    extent = max(grid.extent(), 1e-6)
    width0 = (extent / K) ** 2
    center_scale = (extent / 4.0) ** 2 if center_scale is None \
        else float(center_scale)
    width_scale = (0.5 * width0) ** 2 if width_scale is None \
        else float(width_scale)

    if template is None:
        centroid = pos.mean(axis=0)
        template = HtfaGlobalTemplate(
            centers=_farthest_point_init(data, pos, K),
            widths=np.full(K, width0),
            center_prior_mean=np.tile(centroid, (K, 1)),
            center_prior_var=np.full(K, (extent / 2.0) ** 2),
            width_prior_mean=np.full(K, width0),
            width_prior_var=np.full(K, width0 ** 2),
        )

    subjects = []
    F_init = factor_matrix(template.centers, template.widths, pos)
    for m, X in enumerate(data):
        W0 = tfa_weight_step(X, F_init, 1.0, None, weight_var)
        if gamma2 is None:
            g2 = max(float(np.mean((X - W0 @ F_init) ** 2)), 1e-12)
        else:
            g2 = float(gamma2[m] if isinstance(gamma2, (list, tuple))
                       else gamma2)
        subjects.append(HtfaSubjectModel(
            centers=template.centers.copy(), widths=template.widths.copy(),
            W=W0, gamma2=g2, center_scale=center_scale,
            width_scale=width_scale, phi=float(phi), weight_var=weight_var))

    trace = [htfa_map_objective(data, subjects, template, grid)]
    rejected = 0
    converged = False
    for sweep in range(max_iters):
        def one(args):
            m, X, sub = args
            v_idx = t_idx = None
            if phi < 1.0:
                rng = substream(seed, f"htfa.fit.sub.{sweep}.{m}")
                v_idx = np.sort(rng.choice(
                    V, size=max(K, int(np.ceil(phi * V))), replace=False))
                T_m = X.shape[0]
                t_idx = np.sort(rng.choice(
                    T_m, size=max(K, int(np.ceil(phi * T_m))),
                    replace=False))
            return tfa_local_step(X, grid, sub, template,
                                  max_nfev=max_nfev,
                                  voxel_idx=v_idx, time_idx=t_idx)
        results = ordered_map(one, list(zip(range(len(data)), data,
                                            subjects)))
        subjects = [r[0] for r in results]
        rejected += sum(1 for r in results if not r[1])
        template = htfa_global_step(subjects, template)
        trace.append(htfa_map_objective(data, subjects, template, grid))
        if abs(trace[-2] - trace[-1]) <= tol * (1.0 + abs(trace[-2])):
            converged = True
            break
    report = FitReport(model="htfa", trace=trace, converged=converged,
                       wall_time=time.monotonic() - t0, seed=seed,
                       metrics={"rejected_local_steps": float(rejected)})
    return template, subjects, report
