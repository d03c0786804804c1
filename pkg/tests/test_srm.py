"""Shared response models: exact limits, recovery, monotone objectives."""

import numpy as np
import pytest

from neuropgm import (
    DegenerateNoise,
    SimSpec,
    SrmModel,
    canonical_correlations,
    fit_hyperalignment,
    fit_srm_deterministic,
    fit_srm_probabilistic,
    simulate_srm,
    srm_transform,
)
from neuropgm._rng import substream


def _noiseless(m=5, t=40, v=30, k=3, seed=0):
    spec = SimSpec(model="srm", m_subjects=m, t_timepoints=t, v_voxels=v,
                   k_factors=k, seed=seed,
                   extras={"noise_var": 0.0, "mean_scale": 0.0})
    return simulate_srm(spec)


def test_deterministic_fit_drives_noiseless_objective_to_zero():
    datasets, _ = _noiseless(m=5, k=3)
    model, trace = fit_srm_deterministic(datasets, K=3, max_iters=100)
    total = sum(float(np.sum(X ** 2)) for X in datasets)
    assert trace[-1] < 1e-8 * total


def test_deterministic_fit_is_exact_with_a_complete_basis():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 6))
    model, trace = fit_srm_deterministic([X], K=6, max_iters=50)
    assert trace[-1] < 1e-8 * float(np.sum(X ** 2))


def test_deterministic_objective_never_increases():
    rng = np.random.default_rng(3)
    for trial in range(3):
        datasets = [rng.standard_normal((25, 18)) for _ in range(3)]
        _, trace = fit_srm_deterministic(datasets, K=4, max_iters=40)
        diffs = np.diff(trace)
        assert np.all(diffs <= 1e-8)


def test_probabilistic_fit_recovers_shared_series():
    spec = SimSpec(model="srm", m_subjects=5, t_timepoints=150, v_voxels=200,
                   k_factors=5, snr=1.0, seed=0)
    datasets, truth = simulate_srm(spec)
    model, trace = fit_srm_probabilistic(datasets, K=5)
    cc = canonical_correlations(truth.latents["S"], model.s_hat)
    assert float(np.min(cc)) >= 0.9


def test_probabilistic_fit_recovers_noise_variances():
    spec = SimSpec(model="srm", m_subjects=3, t_timepoints=300, v_voxels=100,
                   k_factors=3, snr=1.0, seed=2)
    datasets, truth = simulate_srm(spec)
    model, _ = fit_srm_probabilistic(datasets, K=3)
    for est, ref in zip(model.rho2, truth.noise["noise_var"]):
        assert abs(est - ref) <= 0.2 * ref


def test_probabilistic_loglik_never_decreases():
    rng = np.random.default_rng(7)
    for trial in range(3):
        datasets = [rng.standard_normal((30, 20)) for _ in range(3)]
        _, trace = fit_srm_probabilistic(datasets, K=4, max_iters=30)
        rel = max(abs(trace[0]), 1.0)
        assert np.all(np.diff(trace) >= -1e-8 * rel)


def test_probabilistic_fit_flags_collapsing_noise():
    # rank-deficient noiseless data leaves the off-factor directions
    # with exactly zero variance, so rho^2 must run to its floor
    datasets, _ = _noiseless(m=1, t=30, v=8, k=4, seed=4)
    with pytest.raises(DegenerateNoise):
        fit_srm_probabilistic(datasets, K=4, max_iters=2000, tol=0.0)


def test_fitted_bases_have_orthonormal_columns():
    spec = SimSpec(model="srm", m_subjects=3, t_timepoints=40, v_voxels=25,
                   k_factors=3, seed=5)
    datasets, _ = simulate_srm(spec)
    for fit in (fit_srm_deterministic, fit_srm_probabilistic):
        model, _ = fit(datasets, K=3, max_iters=20)
        for W in model.W:
            assert np.max(np.abs(W.T @ W - np.eye(3))) < 1e-8


def test_deterministic_objective_ignores_shared_rotations():
    datasets, _ = _noiseless(m=3, t=30, v=20, k=3, seed=6)
    model, _ = fit_srm_deterministic(datasets, K=3, max_iters=30)
    S = model.s_hat

    def objective(bases, shared):
        return sum(float(np.sum((X.T - W @ shared) ** 2))
                   for X, W in zip(datasets, bases))

    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))
    base = objective(model.W, S)
    rotated = objective([W @ q for W in model.W], q.T @ S)
    assert abs(base - rotated) <= 1e-10 * max(base, 1.0)


def test_alignment_undoes_an_orthogonal_scramble():
    rng = np.random.default_rng(8)
    X1 = rng.standard_normal((30, 12))
    q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    X2 = X1 @ q
    W, S = fit_hyperalignment([X1, X2])
    obj = sum(float(np.sum((w.T @ X.T - S) ** 2))
              for w, X in zip(W, (X1, X2)))
    assert obj < 1e-8 * float(np.sum(X1 ** 2))


def test_alignment_with_one_subject_is_immediate():
    X = np.random.default_rng(9).standard_normal((20, 8))
    W, S = fit_hyperalignment([X], max_iters=1)
    assert float(np.sum((W[0].T @ X.T - S) ** 2)) < 1e-20


def test_alignment_objective_never_increases():
    rng = np.random.default_rng(10)
    datasets = [rng.standard_normal((25, 10)) for _ in range(3)]

    def obj_after(iters):
        W, S = fit_hyperalignment(datasets, max_iters=iters)
        return sum(float(np.sum((w.T @ X.T - S) ** 2))
                   for w, X in zip(W, datasets))

    vals = [obj_after(i) for i in range(1, 7)]
    assert np.all(np.diff(vals) <= 1e-8 * max(vals[0], 1.0))


def test_transform_inverts_the_generative_map_without_noise():
    datasets, truth = _noiseless(m=2, t=30, v=20, k=3, seed=11)
    model = SrmModel(k=3, W=truth.latents["W"],
                     mu=truth.latents["mu"], s_hat=truth.latents["S"])
    for m in range(2):
        S_rec = srm_transform(model, datasets[m], m)
        assert np.max(np.abs(S_rec - truth.latents["S"])) < 1e-10


def test_transform_of_pure_noise_has_noise_scale_variance():
    rng = substream(0, "test.srm.noisescale")
    v, t, k, rho2 = 40, 20_000, 3, 0.5
    W = np.linalg.qr(rng.standard_normal((v, k)))[0]
    mu = rng.standard_normal(v)
    model = SrmModel(k=k, W=[W], mu=[mu], s_hat=np.zeros((k, 5)))
    X = mu[None, :] + np.sqrt(rho2) * rng.standard_normal((t, v))
    proj = srm_transform(model, X, 0)
    emp = float(np.mean(proj ** 2))
    assert abs(emp - rho2) < 0.05 * rho2


def test_transform_tracks_the_fitted_shared_series():
    spec = SimSpec(model="srm", m_subjects=3, t_timepoints=100, v_voxels=80,
                   k_factors=3, snr=2.0, seed=12)
    datasets, _ = simulate_srm(spec)
    model, _ = fit_srm_probabilistic(datasets, K=3)
    for m in range(3):
        proj = srm_transform(model, datasets[m], m)
        for i in range(3):
            r = np.corrcoef(proj[i], model.s_hat[i])[0, 1]
            assert abs(r) >= 0.99 or np.max(np.abs(model.s_hat[i])) < 1e-12
