"""Seeded forward samplers for every generative model in the package.

Each simulator draws from its model's exact generative process and
returns ``(data, truth)`` where the truth bundle stores every latent as
sampled, so fitters can be scored by simulate-and-recover.  Sampling is
deterministic: one Philox stream per (seed, purpose) pair, so the same
SimSpec reproduces output bit-for-bit and adding subjects or factors
never shifts unrelated draws.

Noise scaling: SNR is defined as Var(signal entries) / Var(noise
entries).  Unless an explicit ``noise_var`` is supplied, the noise
variance is set to the *realized* signal variance divided by the spec
SNR, making the requested ratio hold by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .covariance import AR1
from .errors import BadSpec, DimensionMismatch
from .htfa import VoxelGrid, rbf_factor
from .linalg import cholesky_logdet

__all__ = [
    "SimSpec",
    "SimTruth",
    "MODEL_TAGS",
    "simulate_srm",
    "simulate_htfa",
    "simulate_drd",
    "simulate_brsa",
    "simulate_matnormal",
]

MODEL_TAGS = ("srm", "htfa", "drd", "brsa", "mnsrm", "dpsrm")


@dataclass(frozen=True)
class SimSpec:
    """Dimensions, SNR, seed, and model-specific knobs for one simulation."""

    model: str
    m_subjects: int = 1
    t_timepoints: int = 50
    v_voxels: int = 50
    k_factors: int = 3
    snr: float = 1.0
    seed: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_TAGS:
            raise BadSpec(f"unknown model tag {self.model!r}; "
                          f"expected one of {MODEL_TAGS}")
        for name in ("m_subjects", "t_timepoints", "v_voxels", "k_factors"):
            if int(getattr(self, name)) < 1:
                raise BadSpec(f"{name} must be >= 1")
        if not self.snr > 0:
            raise BadSpec("snr must be > 0")

    def extra(self, key, default=None):
        return self.extras.get(key, default)


@dataclass(frozen=True)
class SimTruth:
    """Ground-truth latents and noise parameters of one simulation."""

    model: str
    seed: int
    latents: dict
    noise: dict


def _noise_var(spec, signal, override):
    """Realized-signal variance divided by SNR, unless overridden."""
    if override is not None:
        nv = float(override)
        if nv < 0:
            raise BadSpec("noise_var must be >= 0")
        return nv
    base = float(np.var(signal))
    if base == 0.0:
        return 1.0  # zero signal: keep unit noise so data stays non-trivial
    return base / spec.snr


def _orthonormal_columns(rng, v, k):
    """Orthogonal factor of a Gaussian matrix, sign-fixed for determinism."""
    Q, R = np.linalg.qr(rng.standard_normal((v, k)))
    return Q * np.sign(np.diag(R))


def _default_sigma_s(k):
    # distinct variances; keeps shared-response components identifiable
    return np.diag(np.linspace(2.0, 1.0, k))


def simulate_srm(spec):
    """Sample the probabilistic shared response model.

    Per subject m: x_t = W_m s_t + mu_m + noise, with s_t ~ N(0, Sigma_s)
    shared across subjects and W_m drawn with orthonormal columns.

    extras: ``sigma_s`` (K x K), ``noise_var`` (scalar or per-subject
    list; overrides SNR), ``voxels_per_subject`` (list of V_m),
    ``mean_scale``.

    Returns (datasets, truth): datasets are T x V_m arrays; truth holds
    S (K x T), each W_m, mu_m, sigma_s, and per-subject noise variances.
    """
    M, T, K = spec.m_subjects, spec.t_timepoints, spec.k_factors
    v_list = spec.extra("voxels_per_subject")
    v_list = ([int(v) for v in v_list] if v_list is not None
              else [spec.v_voxels] * M)
    if len(v_list) != M:
        raise BadSpec("voxels_per_subject must list one size per subject")
    if K > T or any(K > v for v in v_list):
        raise BadSpec("need K <= T and K <= V_m for every subject")
    sigma_s = np.asarray(spec.extra("sigma_s", _default_sigma_s(K)),
                         dtype=np.float64)
    if sigma_s.shape != (K, K):
        raise BadSpec("sigma_s must be K x K")
    L_s = cholesky_logdet(sigma_s).L
    mean_scale = float(spec.extra("mean_scale", 1.0))

    S = L_s @ substream(spec.seed, "srm.shared").standard_normal((K, T))
    override = spec.extra("noise_var")
    datasets, basis, means, noise_vars = [], [], [], []
    for m in range(M):
        V = v_list[m]
        W = _orthonormal_columns(substream(spec.seed, f"srm.basis.{m}"), V, K)
        mu = mean_scale * substream(spec.seed,
                                    f"srm.mean.{m}").standard_normal(V)
        signal = W @ S
        per = override[m] if isinstance(override, (list, tuple)) else override
        nv = _noise_var(spec, signal, per)
        Y = signal + mu[:, None]
        if nv > 0:
            Y = Y + np.sqrt(nv) * substream(
                spec.seed, f"srm.noise.{m}").standard_normal((V, T))
        datasets.append(Y.T.copy())
        basis.append(W)
        means.append(mu)
        noise_vars.append(nv)
    truth = SimTruth(model="srm", seed=spec.seed,
                     latents={"S": S, "W": basis, "mu": means,
                              "sigma_s": sigma_s},
                     noise={"noise_var": noise_vars})
    return datasets, truth


def _grid_positions(grid):
    if isinstance(grid, VoxelGrid):
        return grid.positions
    return VoxelGrid(np.asarray(grid, dtype=np.float64)).positions


def _spread_centers(rng, lo, hi, k, min_sep, attempts=500):
    """Uniform draws over the box, resampled to keep centers separated."""
    best, best_sep = None, -1.0
    for _ in range(attempts):
        cand = rng.uniform(lo, hi, size=(k, lo.size))
        if k == 1:
            return cand
        d = np.linalg.norm(cand[:, None, :] - cand[None, :, :], axis=-1)
        sep = np.min(d[np.triu_indices(k, 1)])
        if sep >= min_sep:
            return cand
        if sep > best_sep:
            best, best_sep = cand, sep
    return best


def simulate_htfa(spec, grid):
    """Sample the hierarchical topographic factor model.

    Global radial-basis centers/widths are drawn first; each subject
    perturbs them (centers with Gaussian jitter, widths with truncated
    Gaussian jitter), mixes the factor images with Gaussian weights, and
    adds iid noise: X_m = W_m F_m + E_m.

    extras: ``center_sep`` (minimum global center separation),
    ``center_jitter``, ``width0``, ``width_jitter``, ``weight_scale``,
    ``noise_var``.

    Returns (datasets, truth): datasets are T x V arrays.
    """
    M, T, K = spec.m_subjects, spec.t_timepoints, spec.k_factors
    pos = _grid_positions(grid)
    V = pos.shape[0]
    if V != spec.v_voxels:
        raise BadSpec(f"grid has {V} voxels but the spec says "
                      f"{spec.v_voxels}")
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    extent = float(np.linalg.norm(hi - lo))
    if extent == 0:
        raise BadSpec("grid is degenerate (a single point)")
    margin = 0.1 * (hi - lo)
    min_sep = float(spec.extra("center_sep", 0.3 * extent))
    width0 = float(spec.extra("width0", (extent / (K + 1)) ** 2))
    center_jitter = float(spec.extra("center_jitter", 0.02 * extent))
    width_jitter = float(spec.extra("width_jitter", 0.05))
    weight_scale = float(spec.extra("weight_scale", 1.0))

    rng_c = substream(spec.seed, "htfa.centers")
    centers = _spread_centers(rng_c, lo + margin, hi - margin, K, min_sep)
    widths = np.maximum(
        width0 * np.exp(0.25 * substream(
            spec.seed, "htfa.widths").standard_normal(K)), 1e-3)

    datasets, sub_centers, sub_widths, weights, factors, noise_vars = \
        [], [], [], [], [], []
    override = spec.extra("noise_var")
    for m in range(M):
        rng_m = substream(spec.seed, f"htfa.subject.{m}")
        c_m = centers + center_jitter * rng_m.standard_normal((K, 3))
        l_m = np.maximum(
            widths + width_jitter * width0 * rng_m.standard_normal(K), 1e-3)
        F = np.stack([rbf_factor(c_m[k], l_m[k], pos) for k in range(K)])
        W = weight_scale * substream(
            spec.seed, f"htfa.weights.{m}").standard_normal((T, K))
        signal = W @ F
        per = override[m] if isinstance(override, (list, tuple)) else override
        nv = _noise_var(spec, signal, per)
        X = signal
        if nv > 0:
            X = X + np.sqrt(nv) * substream(
                spec.seed, f"htfa.noise.{m}").standard_normal((T, V))
        datasets.append(X)
        sub_centers.append(c_m)
        sub_widths.append(l_m)
        weights.append(W)
        factors.append(F)
        noise_vars.append(nv)
    truth = SimTruth(model="htfa", seed=spec.seed,
                     latents={"centers": centers, "widths": widths,
                              "subject_centers": sub_centers,
                              "subject_widths": sub_widths,
                              "W": weights, "F": factors},
                     noise={"noise_var": noise_vars})
    return datasets, truth


def simulate_drd(spec, points):
    """Sample the linear decoding model with a structured log-variance field.

    u is either a Gaussian-process draw over ``points`` (mode "gp") or a
    piecewise-constant field with contiguous active blocks (mode
    "blocks"); then w ~ N(0, diag(exp u)), X has iid standard-normal
    entries, and y = X w + noise.

    extras: ``mode`` ("gp" | "blocks"), ``b``, ``rho``, ``ell``
    (GP mode); ``u_low``, ``u_high``, ``block_count``, ``block_frac``
    (blocks mode); ``u_fixed`` (explicit field, overrides mode);
    ``noise_var``.

    Returns (X, y, truth).
    """
    T, V = spec.t_timepoints, spec.v_voxels
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] != V:
        raise BadSpec(f"points count {pts.shape[0]} != v_voxels {V}")
    mode = spec.extra("mode", "gp")
    active = None
    u_fixed = spec.extra("u_fixed")
    if u_fixed is not None:
        u = np.asarray(u_fixed, dtype=np.float64)
        if u.shape != (V,):
            raise BadSpec(f"u_fixed must have shape ({V},), got {u.shape}")
        mode = "fixed"
        params = {}
    elif mode == "gp":
        from .covariance import SEKernel
        b = float(spec.extra("b", -1.0))
        # unit marginal variance: a deeply negative mean must actually
        # silence the weights instead of being washed out by the field
        rho = float(spec.extra("rho", 1.0))
        extent = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        ell = float(spec.extra("ell", max(extent / 10.0, 1e-6)))
        kern = SEKernel(pts, rho=rho, ell=ell)
        u = b + kern.cholesky_lower() @ substream(
            spec.seed, "drd.field").standard_normal(V)
        params = {"b": b, "rho": rho, "ell": ell}
    elif mode == "blocks":
        u_low = float(spec.extra("u_low", -8.0))
        u_high = float(spec.extra("u_high", 0.0))
        count = int(spec.extra("block_count", 2))
        frac = float(spec.extra("block_frac", 0.05))
        width = max(1, int(round(frac * V)))
        if count * width > V:
            raise BadSpec("blocks do not fit into V voxels")
        rng_b = substream(spec.seed, "drd.blocks")
        active = np.zeros(V, dtype=bool)
        starts = []
        for _ in range(count):
            for _ in range(1000):
                s = int(rng_b.integers(0, V - width + 1))
                if all(s + width <= t or t + width <= s for t in starts):
                    starts.append(s)
                    break
            else:
                raise BadSpec("could not place non-overlapping blocks")
            active[starts[-1]:starts[-1] + width] = True
        u = np.where(active, u_high, u_low)
        params = {"u_low": u_low, "u_high": u_high, "starts": starts,
                  "width": width}
    else:
        raise BadSpec(f"unknown drd mode {mode!r}")

    w = np.exp(0.5 * u) * substream(spec.seed,
                                    "drd.weights").standard_normal(V)
    X = substream(spec.seed, "drd.design").standard_normal((T, V))
    signal = X @ w
    nv = _noise_var(spec, signal, spec.extra("noise_var"))
    y = signal
    if nv > 0:
        y = y + np.sqrt(nv) * substream(
            spec.seed, "drd.noise").standard_normal(T)
    truth = SimTruth(model="drd", seed=spec.seed,
                     latents={"u": u, "w": w, "mode": mode,
                              "active": active, "params": params,
                              "points": pts},
                     noise={"noise_var": nv})
    return X, y, truth


def _psd_factor(U):
    """Factor B with B B^T = U for symmetric PSD U (rank-deficient ok)."""
    U = np.asarray(U, dtype=np.float64)
    vals, vecs = np.linalg.eigh(0.5 * (U + U.T))
    if np.any(vals < -1e-10 * max(1.0, np.max(np.abs(vals)))):
        raise BadSpec("pattern covariance must be positive semidefinite")
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def simulate_brsa(spec, S, U_W):
    """Sample task-evoked patterns with AR(1) noise for similarity analysis.

    Each voxel's pattern column is drawn N(0, U_W); data is
    X = S W + S0 W0 + E with optional smooth nuisance factors and
    per-voxel stationary AR(1) noise.

    extras: ``n_nuisance``, ``nuisance_scale``, ``phi_range``
    (low, high), ``sigma_spread`` (lognormal spread of per-voxel
    variances), ``noise_var``.

    Returns (X, truth); X is T x V.
    """
    T, V, K = spec.t_timepoints, spec.v_voxels, spec.k_factors
    S = np.asarray(S, dtype=np.float64)
    if S.shape != (T, K):
        raise BadSpec(f"design must be T x K = {(T, K)}, got {S.shape}")
    U_W = np.asarray(U_W, dtype=np.float64)
    if U_W.shape != (K, K):
        raise BadSpec("U_W must be K x K")
    B = _psd_factor(U_W)
    W = B @ substream(spec.seed, "brsa.patterns").standard_normal((K, V))
    signal = S @ W

    n0 = int(spec.extra("n_nuisance", 0))
    S0 = np.zeros((T, 0))
    W0 = np.zeros((0, V))
    if n0 > 0:
        rng_n = substream(spec.seed, "brsa.nuisance")
        walk = np.cumsum(rng_n.standard_normal((T, n0)), axis=0)
        walk = walk - walk.mean(axis=0)
        S0 = walk / walk.std(axis=0)
        W0 = float(spec.extra("nuisance_scale", 1.0)) \
            * rng_n.standard_normal((n0, V))

    phi_lo, phi_hi = spec.extra("phi_range", (0.2, 0.6))
    rng_noise = substream(spec.seed, "brsa.noise")
    phi_v = rng_noise.uniform(float(phi_lo), float(phi_hi), size=V)
    base = _noise_var(spec, signal, spec.extra("noise_var"))
    spread = float(spec.extra("sigma_spread", 0.3))
    sigma2_v = base * np.exp(spread * rng_noise.standard_normal(V)) \
        if base > 0 else np.zeros(V)

    X = signal + S0 @ W0
    if base > 0:
        E = np.empty((T, V))
        z = rng_noise.standard_normal((T, V))
        sd = np.sqrt(sigma2_v)
        innov = np.sqrt(sigma2_v * (1.0 - phi_v ** 2))
        E[0] = sd * z[0]
        for t in range(1, T):
            E[t] = phi_v * E[t - 1] + innov * z[t]
        X = X + E
    truth = SimTruth(model="brsa", seed=spec.seed,
                     latents={"W": W, "U_W": U_W, "S0": S0, "W0": W0,
                              "u_empirical": W @ W.T / V},
                     noise={"phi": phi_v, "sigma2": sigma2_v})
    return X, truth


def simulate_matnormal(spec, variant=None):
    """Sample a factor model with Kronecker-separable residuals.

    Residuals are drawn matrix-normal with voxel covariance Sigma_v
    (diagonal, heterogeneous) and temporal covariance Sigma_t (AR(1)).
    Variant "mnsrm" shares S across subjects (S random, W_m fixed per
    subject); "dpsrm" draws W_m matrix-normal with column covariance
    Sigma_w around a shared S.

    extras: ``phi`` (AR(1) lag-1 correlation), ``sigma_s`` / ``sigma_w``
    (K x K), ``w_mode`` ("orthonormal" | "gaussian"), ``mean_scale``,
    ``voxel_spread``, ``noise_var``.

    Returns (datasets, truth); datasets are T x V arrays.
    """
    variant = variant or spec.model
    variant = variant.lower().replace("-", "").replace("_", "")
    if variant in ("mnsrm", "matnormalsrm"):
        variant = "mnsrm"
    elif variant in ("dpsrm", "dualprobabilisticsrm"):
        variant = "dpsrm"
    else:
        raise BadSpec(f"unknown matrix-normal variant {variant!r}")
    M, T, V, K = (spec.m_subjects, spec.t_timepoints, spec.v_voxels,
                  spec.k_factors)
    if K > T or K > V:
        raise BadSpec("need K <= T and K <= V")
    phi = float(spec.extra("phi", 0.5))
    sigma_s = np.asarray(spec.extra("sigma_s", _default_sigma_s(K)),
                         dtype=np.float64)
    sigma_w = np.asarray(spec.extra("sigma_w", _default_sigma_s(K) / K),
                         dtype=np.float64)
    mean_scale = float(spec.extra("mean_scale", 1.0))
    voxel_spread = spec.extra("voxel_spread", (0.7, 1.3))
    w_mode = spec.extra("w_mode", "orthonormal")

    L_s = cholesky_logdet(sigma_s).L
    S = L_s @ substream(spec.seed, "mn.shared").standard_normal((K, T))
    L_w = cholesky_logdet(sigma_w).L if variant == "dpsrm" else None
    sigma_t = AR1(1.0, phi)
    L_t = sigma_t.cholesky_lower(T)

    override = spec.extra("noise_var")
    datasets, basis, means, sigma_v_list = [], [], [], []
    for m in range(M):
        if variant == "dpsrm":
            W = substream(spec.seed,
                          f"mn.basis.{m}").standard_normal((V, K)) @ L_w.T
        elif w_mode == "orthonormal":
            W = _orthonormal_columns(substream(spec.seed, f"mn.basis.{m}"),
                                     V, K)
        else:
            W = substream(spec.seed, f"mn.basis.{m}").standard_normal(
                (V, K)) / np.sqrt(K)
        mu = mean_scale * substream(spec.seed,
                                    f"mn.mean.{m}").standard_normal(V)
        signal = W @ S
        per = override[m] if isinstance(override, (list, tuple)) else override
        nv = _noise_var(spec, signal, per)
        rng_v = substream(spec.seed, f"mn.voxelvar.{m}")
        shape = rng_v.uniform(float(voxel_spread[0]), float(voxel_spread[1]),
                              size=V)
        d_v = nv * shape / shape.mean() if nv > 0 else np.zeros(V)
        Y = signal + mu[:, None]
        if nv > 0:
            Z = substream(spec.seed, f"mn.noise.{m}").standard_normal((V, T))
            Y = Y + np.sqrt(d_v)[:, None] * (Z @ L_t.T)
        datasets.append(Y.T.copy())
        basis.append(W)
        means.append(mu)
        sigma_v_list.append(d_v)
    truth = SimTruth(model=variant, seed=spec.seed,
                     latents={"S": S, "W": basis, "mu": means,
                              "sigma_s": sigma_s,
                              "sigma_w": sigma_w if variant == "dpsrm"
                              else None},
                     noise={"phi": phi, "sigma_v": sigma_v_list,
                            "sigma_t_variance": 1.0})
    return datasets, truth
