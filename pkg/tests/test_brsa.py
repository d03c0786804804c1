"""Pattern-similarity estimation from the marginal model."""

import numpy as np
import pytest

from neuropgm import (
    BadSpec,
    DesignMatrix,
    SimSpec,
    brsa_neg_marginal_loglik,
    convolve_design,
    default_hrf,
    expected_spurious_similarity,
    fit_brsa,
    naive_rsa,
    similarity_from_cov,
    simulate_brsa,
)
from neuropgm._rng import substream

from helpers import assert_grad_close, dense_mvn_logpdf, fd_gradient, \
    random_spd


def test_impulse_event_reproduces_the_kernel():
    kernel = default_hrf()
    t = 5 + kernel.size + 3
    design = convolve_design([(5, 1, 1.0, "a")], t, kernel=kernel)
    col = design.matrix[:, 0]
    assert np.array_equal(col[5:5 + kernel.size], kernel)
    assert np.all(col[:5] == 0.0)
    assert np.all(col[5 + kernel.size:] == 0.0)


def test_convolution_is_linear_in_events():
    events_a = [(3, 2, 1.0, "a")]
    events_b = [(10, 1, 2.0, "a")]
    d_a = convolve_design(events_a, 50).matrix
    d_b = convolve_design(events_b, 50).matrix
    d_ab = convolve_design(events_a + events_b, 50).matrix
    assert np.allclose(d_ab, d_a + d_b, atol=1e-12)


def test_convolution_matches_double_loop():
    kernel = np.array([0.5, 1.0, 0.25])
    events = [(2, 3, 1.5, "a"), (8, 1, -1.0, "b"), (4, 2, 2.0, "a")]
    t = 16
    design = convolve_design(events, t, kernel=kernel)

    ref = {}
    for onset, dur, amp, cond in events:
        train = ref.setdefault(cond, np.zeros(t))
        for i in range(int(onset), min(int(onset + dur), t)):
            train[i] += amp
    cols = {}
    for cond, train in ref.items():
        out = np.zeros(t)
        for i in range(t):
            for j in range(kernel.size):
                if 0 <= i - j < t:
                    out[i] += train[i - j] * kernel[j]
        cols[cond] = out
    for idx, cond in enumerate(design.conditions):
        assert np.array_equal(design.matrix[:, idx], cols[cond])


def test_conditions_are_ordered_by_first_appearance():
    design = convolve_design([(0, 1, 1.0, "late"), (5, 1, 1.0, "early")],
                             20)
    assert design.conditions == ("late", "early")


def test_design_rejects_all_zero_columns():
    with pytest.raises(BadSpec):
        DesignMatrix(matrix=np.zeros((10, 1)), conditions=("a",))


def test_similarity_of_diagonal_cov_is_identity():
    sim, bad = similarity_from_cov(np.diag([3.0, 0.5, 7.0]))
    assert np.array_equal(sim, np.eye(3))
    assert not bad.any()


def test_similarity_of_duplicated_rows_is_one():
    u = np.array([[2.0, 2.0], [2.0, 2.0]])
    sim, _ = similarity_from_cov(u)
    assert abs(sim[0, 1] - 1.0) < 1e-12


def test_similarity_is_scale_free():
    u = random_spd(substream(0, "test.brsa.scale"), 5)
    a, _ = similarity_from_cov(u)
    b, _ = similarity_from_cov(4.0 * u)
    assert np.array_equal(a, b)


def test_similarity_matches_monte_carlo_cosine():
    rng = substream(1, "test.brsa.mc")
    u = random_spd(rng, 3)
    L = np.linalg.cholesky(u)
    W = L @ rng.standard_normal((3, 1_000_000))
    norms = np.linalg.norm(W, axis=1)
    cos = (W @ W.T) / np.outer(norms, norms)
    sim, _ = similarity_from_cov(u)
    assert np.max(np.abs(cos - sim)) < 0.01


def _event_schedule(t, k, events_per_cond=8, seed=0, gap=6):
    rng = substream(seed, "test.brsa.sched")
    onsets = np.sort(rng.uniform(0, t - gap - 1, size=k * events_per_cond))
    return [(float(o), 1.5, 1.0, f"c{i % k}")
            for i, o in enumerate(onsets)]


def test_point_estimate_similarity_is_exact_without_noise():
    t, k, v = 200, 4, 80
    design = convolve_design(_event_schedule(t, k), t)
    spec = SimSpec(model="brsa", t_timepoints=t, v_voxels=v, k_factors=k,
                   seed=2, extras={"noise_var": 0.0})
    X, truth = simulate_brsa(spec, design.matrix, np.eye(k))
    sim, patterns = naive_rsa(X, design)
    ref, _ = similarity_from_cov(truth.latents["W"] @
                                 truth.latents["W"].T / v)
    assert np.max(np.abs(sim - ref)) < 1e-6
    assert np.max(np.abs(patterns - truth.latents["W"])) < 1e-6


def test_point_estimate_similarity_on_noise_matches_prediction():
    t, k, v = 120, 4, 60
    design = convolve_design(_event_schedule(t, k, seed=3), t)
    pred = expected_spurious_similarity(design)
    acc = np.zeros((k, k))
    n_seeds = 200
    for seed in range(n_seeds):
        spec = SimSpec(model="brsa", t_timepoints=t, v_voxels=v,
                       k_factors=k, seed=seed,
                       extras={"phi_range": (0.0, 0.0)})
        X, _ = simulate_brsa(spec, design.matrix, np.zeros((k, k)))
        sim, _ = naive_rsa(X, design)
        acc += sim
    acc /= n_seeds
    assert np.max(np.abs(acc - pred)) < 0.05


def test_point_estimate_similarity_shape_checks():
    design = convolve_design(_event_schedule(100, 3, seed=4), 100)
    sim, _ = naive_rsa(substream(5, "x").standard_normal((100, 20)), design)
    assert np.array_equal(sim, sim.T)
    assert np.all(np.diag(sim) == 1.0)
    assert np.all(np.abs(sim) <= 1.0 + 1e-12)


def test_spurious_similarity_of_orthogonal_design_is_identity():
    s = np.linalg.qr(substream(6, "q").standard_normal((50, 4)))[0]
    assert np.allclose(expected_spurious_similarity(s), np.eye(4),
                       atol=1e-12)


def test_spurious_similarity_flips_pairwise_correlation():
    rng = substream(7, "test.brsa.corr")
    a = rng.standard_normal(100)
    b_raw = rng.standard_normal(100)
    a = a / np.linalg.norm(a)
    b_raw = b_raw - (a @ b_raw) * a
    b_raw = b_raw / np.linalg.norm(b_raw)
    r = 0.6
    s = np.column_stack([a, r * a + np.sqrt(1 - r * r) * b_raw])
    sim = expected_spurious_similarity(s)
    assert abs(sim[0, 1] + r) < 1e-10


def _marginal_args(t=50, k=4, v=6, n0=0, seed=8):
    rng = substream(seed, "test.brsa.marg")
    design = convolve_design(_event_schedule(t, k, events_per_cond=5,
                                             seed=seed), t)
    x = rng.standard_normal((t, v))
    ell = np.linalg.cholesky(random_spd(rng, k, scale=0.5))
    log_sigma = 0.2 * rng.standard_normal(v)
    atanh_phi = 0.3 * rng.standard_normal(v)
    nuisance = rng.standard_normal((t, n0)) if n0 else None
    return ell, log_sigma, atanh_phi, design.matrix, nuisance, x


def test_marginal_reduces_to_iid_likelihood():
    t, v = 40, 5
    rng = substream(9, "test.brsa.iid")
    x = rng.standard_normal((t, v))
    s = rng.standard_normal((t, 3))
    log_sigma = 0.3 * rng.standard_normal(v)
    val = brsa_neg_marginal_loglik(np.zeros((3, 3)), log_sigma,
                                   np.zeros(v), s, None, x)[0]
    ref = -sum(dense_mvn_logpdf(x[:, j], np.zeros(t),
                                np.exp(2.0 * log_sigma[j]) * np.eye(t))
               for j in range(v))
    assert abs(val - ref) <= 1e-10 * max(abs(ref), 1.0)


def test_marginal_matches_dense_oracle_with_nuisance():
    ell, log_sigma, atanh_phi, s, nuisance, x = _marginal_args(n0=2)
    val = brsa_neg_marginal_loglik(ell, log_sigma, atanh_phi, s,
                                   nuisance, x)[0]
    t, v = x.shape
    u = ell @ ell.T
    lag = np.abs(np.subtract.outer(np.arange(t), np.arange(t)))
    ref = 0.0
    for j in range(v):
        phi = np.tanh(atanh_phi[j])
        sigma2 = np.exp(2.0 * log_sigma[j])
        cov = s @ u @ s.T + sigma2 * phi ** lag
        cov_inv = np.linalg.inv(cov)
        # profile the nuisance weights by generalized least squares
        gram = nuisance.T @ cov_inv @ nuisance
        w0 = np.linalg.solve(gram, nuisance.T @ cov_inv @ x[:, j])
        resid = x[:, j] - nuisance @ w0
        ref -= dense_mvn_logpdf(resid, np.zeros(t), cov)
    assert abs(val - ref) <= 1e-8 * max(abs(ref), 1.0)


def test_marginal_gradients_match_finite_differences():
    ell, log_sigma, atanh_phi, s, _, x = _marginal_args(t=30, k=3, v=4)
    k = ell.shape[0]
    v = x.shape[1]
    tril = np.tril_indices(k)

    def pack(e, ls, ap):
        return np.concatenate([e[tril], ls, ap])

    def unpack(vec):
        e = np.zeros((k, k))
        e[tril] = vec[:tril[0].size]
        ls = vec[tril[0].size:tril[0].size + v]
        ap = vec[tril[0].size + v:]
        return e, ls, ap

    def value(vec):
        e, ls, ap = unpack(vec)
        return brsa_neg_marginal_loglik(e, ls, ap, s, None, x)[0]

    vec0 = pack(ell, log_sigma, atanh_phi)
    _, g_l, g_ls, g_ap = brsa_neg_marginal_loglik(ell, log_sigma,
                                                  atanh_phi, s, None, x)
    analytic = pack(g_l, g_ls, g_ap)
    numeric = fd_gradient(value, vec0)
    assert_grad_close(analytic, numeric, rtol=1e-4)


def test_marginal_gradients_with_nuisance_match_finite_differences():
    ell, log_sigma, atanh_phi, s, nuisance, x = _marginal_args(
        t=30, k=2, v=3, n0=2)
    _, _, g_ls, _ = brsa_neg_marginal_loglik(ell, log_sigma, atanh_phi, s,
                                             nuisance, x)
    num = fd_gradient(
        lambda ls: brsa_neg_marginal_loglik(ell, ls, atanh_phi, s,
                                            nuisance, x)[0], log_sigma)
    assert_grad_close(g_ls, num, rtol=1e-4)


def _fitted_problem(seed=0, t=120, k=4, v=150, snr=10.0, **fit_kwargs):
    design = convolve_design(_event_schedule(t, k, seed=seed), t)
    rng = substream(seed, "test.brsa.uw")
    u_w = random_spd(rng, k)
    spec = SimSpec(model="brsa", t_timepoints=t, v_voxels=v, k_factors=k,
                   snr=snr, seed=seed)
    x, truth = simulate_brsa(spec, design.matrix, u_w)
    model = fit_brsa(x, design, **fit_kwargs)
    ref, _ = similarity_from_cov(truth.latents["u_empirical"])
    return model, ref


def test_high_snr_fit_recovers_the_similarity_structure():
    model, ref = _fitted_problem(seed=10)
    assert np.max(np.abs(model.similarity - ref)) < 0.05


def test_fit_trace_is_non_decreasing_without_nuisance():
    model, _ = _fitted_problem(seed=11, v=80, snr=1.0, n_nuisance=0,
                               max_iters=60)
    trace = np.asarray(model.loglik_trace)
    rel = max(abs(trace[0]), 1.0)
    assert np.all(np.diff(trace) >= -1e-8 * rel)


def test_fitted_pattern_covariance_is_positive_semidefinite():
    model, _ = _fitted_problem(seed=12, v=60, snr=1.0, max_iters=40)
    u = model.chol @ model.chol.T
    assert np.min(np.linalg.eigvalsh(u)) >= -1e-12
    assert np.max(np.abs(model.similarity - model.similarity.T)) < 1e-12
    assert np.all(np.diag(model.similarity) == 1.0)
    assert np.all(np.abs(model.phi) < 1.0)
    assert np.all(model.sigma2 > 0.0)


def test_fit_is_invariant_to_condition_permutation():
    t, k, v = 60, 4, 80
    design = convolve_design(_event_schedule(t, k, events_per_cond=5,
                                             seed=13), t)
    rng = substream(13, "test.brsa.perm")
    u_w = random_spd(rng, k)
    spec = SimSpec(model="brsa", t_timepoints=t, v_voxels=v, k_factors=k,
                   snr=2.0, seed=13)
    x, _ = simulate_brsa(spec, design.matrix, u_w)
    perm = np.array([2, 0, 3, 1])
    permuted = DesignMatrix(matrix=design.matrix[:, perm],
                            conditions=tuple(design.conditions[i]
                                             for i in perm))
    m1 = fit_brsa(x, design, max_iters=500, tol=1e-14)
    m2 = fit_brsa(x, permuted, max_iters=500, tol=1e-14)
    assert np.max(np.abs(m1.similarity[np.ix_(perm, perm)]
                         - m2.similarity)) < 1e-6
