"""Forward simulators: exactness limits, moment checks, determinism."""

import numpy as np
import pytest

from neuropgm import (
    BadSpec,
    SimSpec,
    VoxelGrid,
    expected_spurious_similarity,
    simulate_brsa,
    simulate_drd,
    simulate_htfa,
    simulate_matnormal,
    simulate_srm,
)


def test_srm_zero_noise_is_exact():
    spec = SimSpec(model="srm", m_subjects=3, t_timepoints=40, v_voxels=25,
                   k_factors=4, seed=3, extras={"noise_var": 0.0})
    datasets, truth = simulate_srm(spec)
    S = truth.latents["S"]
    for X, W, mu in zip(datasets, truth.latents["W"], truth.latents["mu"]):
        assert np.array_equal(X.T, W @ S + mu[:, None])


def test_srm_same_seed_bit_identical():
    spec = SimSpec(model="srm", m_subjects=2, t_timepoints=30, v_voxels=20,
                   k_factors=3, snr=1.0, seed=11)
    a, ta = simulate_srm(spec)
    b, tb = simulate_srm(spec)
    for xa, xb in zip(a, b):
        assert xa.tobytes() == xb.tobytes()
    assert ta.latents["S"].tobytes() == tb.latents["S"].tobytes()


def test_srm_shared_series_covariance_matches_prior():
    spec = SimSpec(model="srm", m_subjects=1, t_timepoints=10_000,
                   v_voxels=10, k_factors=2, seed=5)
    _, truth = simulate_srm(spec)
    S = truth.latents["S"]
    emp = S @ S.T / S.shape[1]
    ref = truth.latents["sigma_s"]
    assert np.linalg.norm(emp - ref) < 0.05 * np.linalg.norm(ref)


def test_srm_snr_is_realized():
    spec = SimSpec(model="srm", m_subjects=1, t_timepoints=200, v_voxels=500,
                   k_factors=3, snr=2.0, seed=7)
    datasets, truth = simulate_srm(spec)
    W = truth.latents["W"][0]
    mu = truth.latents["mu"][0]
    signal = (W @ truth.latents["S"]).T
    noise = datasets[0] - signal - mu[None, :]
    ratio = float(np.var(signal)) / float(np.var(noise))
    assert abs(ratio - 2.0) < 0.2


def test_srm_rejects_bad_factor_count():
    with pytest.raises(BadSpec):
        simulate_srm(SimSpec(model="srm", t_timepoints=5, v_voxels=8,
                             k_factors=6))


def test_htfa_zero_noise_is_exact():
    grid = VoxelGrid.regular((5, 5, 5))
    spec = SimSpec(model="htfa", m_subjects=2, t_timepoints=20,
                   v_voxels=125, k_factors=3, seed=2,
                   extras={"noise_var": 0.0})
    datasets, truth = simulate_htfa(spec, grid)
    for X, W, F in zip(datasets, truth.latents["W"], truth.latents["F"]):
        assert np.array_equal(X, W @ F)


def test_htfa_zero_jitter_pins_subject_centers():
    grid = VoxelGrid.regular((6, 6, 6))
    spec = SimSpec(model="htfa", m_subjects=3, t_timepoints=10,
                   v_voxels=216, k_factors=2, seed=4,
                   extras={"center_jitter": 1e-12, "width_jitter": 0.0})
    _, truth = simulate_htfa(spec, grid)
    for c_m in truth.latents["subject_centers"]:
        assert np.max(np.abs(c_m - truth.latents["centers"])) < 1e-5


def test_htfa_factor_rows_peak_at_nearest_grid_point():
    grid = VoxelGrid.regular((7, 7, 7))
    spec = SimSpec(model="htfa", m_subjects=1, t_timepoints=5,
                   v_voxels=343, k_factors=3, seed=9)
    _, truth = simulate_htfa(spec, grid)
    F = truth.latents["F"][0]
    centers = truth.latents["subject_centers"][0]
    for k in range(F.shape[0]):
        d2 = np.sum((grid.positions - centers[k]) ** 2, axis=1)
        assert int(np.argmax(F[k])) == int(np.argmin(d2))
        assert np.all(F[k] > 0.0) and np.all(F[k] <= 1.0)


def test_drd_deep_negative_field_kills_weights():
    failures = 0
    for seed in range(100):
        spec = SimSpec(model="drd", t_timepoints=5, v_voxels=80, seed=seed,
                       extras={"b": -20.0})
        _, _, truth = simulate_drd(spec, np.arange(80, dtype=float))
        if np.max(np.abs(truth.latents["w"])) >= 1e-3:
            failures += 1
    assert failures <= 1


def test_drd_zero_noise_targets_are_exact():
    spec = SimSpec(model="drd", t_timepoints=30, v_voxels=40, seed=6,
                   extras={"noise_var": 0.0})
    X, y, truth = simulate_drd(spec, np.arange(40, dtype=float))
    assert np.array_equal(y, X @ truth.latents["w"])


def test_drd_weight_variance_matches_field():
    u = np.array([-2.0, -0.5, 0.0, 0.7])
    draws = np.empty((10_000, 4))
    for seed in range(draws.shape[0]):
        spec = SimSpec(model="drd", t_timepoints=2, v_voxels=4, seed=seed,
                       extras={"u_fixed": u, "noise_var": 0.0})
        _, _, truth = simulate_drd(spec, np.arange(4, dtype=float))
        draws[seed] = truth.latents["w"]
    emp = np.var(draws, axis=0)
    assert np.max(np.abs(emp / np.exp(u) - 1.0)) < 0.10


def test_drd_blocks_mode_marks_active_voxels():
    spec = SimSpec(model="drd", t_timepoints=10, v_voxels=200, seed=1,
                   extras={"mode": "blocks", "block_count": 2,
                           "block_frac": 0.05, "u_low": -8.0,
                           "u_high": 0.0})
    _, _, truth = simulate_drd(spec, np.arange(200, dtype=float))
    active = truth.latents["active"]
    assert active.sum() == 20
    assert np.all(truth.latents["u"][active] == 0.0)
    assert np.all(truth.latents["u"][~active] == -8.0)


def _four_condition_design(t):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((t, 4))
    a[:, 1] = 0.6 * a[:, 0] + 0.8 * a[:, 1]
    a[:, 3] = 0.5 * a[:, 2] + np.sqrt(0.75) * a[:, 3]
    return a


def test_brsa_zero_pattern_cov_gives_pure_noise():
    t, k, v = 120, 4, 60
    s = _four_condition_design(t)
    spec = SimSpec(model="brsa", t_timepoints=t, v_voxels=v, k_factors=k,
                   seed=8, extras={"phi_range": (0.0, 0.0)})
    X, truth = simulate_brsa(spec, s, np.zeros((k, k)))
    assert np.all(truth.latents["W"] == 0.0)
    lag1 = np.mean(np.sum(X[1:] * X[:-1], axis=0)
                   / np.sum(X[:-1] ** 2, axis=0))
    assert abs(lag1) < 0.05


def test_brsa_pattern_second_moment_matches_cov():
    k, v = 3, 100_000
    u = np.array([[1.0, 0.4, 0.0], [0.4, 0.8, -0.2], [0.0, -0.2, 0.5]])
    spec = SimSpec(model="brsa", t_timepoints=8, v_voxels=v, k_factors=k,
                   seed=12)
    s = np.random.default_rng(1).standard_normal((8, k))
    _, truth = simulate_brsa(spec, s, u)
    W = truth.latents["W"]
    emp = W @ W.T / v
    assert np.linalg.norm(emp - u) < 0.05 * np.linalg.norm(u)
    assert np.allclose(truth.latents["u_empirical"], emp)


def test_brsa_zero_noise_zero_nuisance_is_exact():
    t, k, v = 50, 3, 30
    s = np.random.default_rng(2).standard_normal((t, k))
    spec = SimSpec(model="brsa", t_timepoints=t, v_voxels=v, k_factors=k,
                   seed=3, extras={"noise_var": 0.0})
    X, truth = simulate_brsa(spec, s, np.eye(k))
    assert np.array_equal(X, s @ truth.latents["W"])


def test_matnormal_iid_limit_matches_shared_response_law():
    spec = SimSpec(model="mnsrm", m_subjects=1, t_timepoints=10_000,
                   v_voxels=12, k_factors=3, snr=1.0, seed=14,
                   extras={"phi": 0.0, "voxel_spread": (1.0, 1.0),
                           "mean_scale": 0.0})
    datasets, truth = simulate_matnormal(spec, variant="mnsrm")
    W = truth.latents["W"][0]
    nv = float(truth.noise["sigma_v"][0][0])
    ref = W @ truth.latents["sigma_s"] @ W.T + nv * np.eye(12)
    X = datasets[0]
    emp = X.T @ X / X.shape[0]
    assert np.linalg.norm(emp - ref) < 0.05 * np.linalg.norm(ref)


def test_matnormal_zero_noise_is_exact():
    spec = SimSpec(model="dpsrm", m_subjects=2, t_timepoints=25,
                   v_voxels=15, k_factors=3, seed=5,
                   extras={"noise_var": 0.0})
    datasets, truth = simulate_matnormal(spec, variant="dpsrm")
    S = truth.latents["S"]
    for X, W, mu in zip(datasets, truth.latents["W"], truth.latents["mu"]):
        assert np.array_equal(X.T, W @ S + mu[:, None])


def test_matnormal_residual_temporal_covariance():
    phi = 0.6
    spec = SimSpec(model="mnsrm", m_subjects=1, t_timepoints=30,
                   v_voxels=2000, k_factors=2, snr=1.0, seed=21,
                   extras={"phi": phi})
    datasets, truth = simulate_matnormal(spec, variant="mnsrm")
    W = truth.latents["W"][0]
    mu = truth.latents["mu"][0]
    resid = datasets[0].T - W @ truth.latents["S"] - mu[:, None]
    emp = resid.T @ resid / resid.shape[0]
    lag = np.abs(np.subtract.outer(np.arange(30), np.arange(30)))
    ref = float(np.mean(truth.noise["sigma_v"][0])) * phi ** lag
    assert np.linalg.norm(emp - ref) < 0.10 * np.linalg.norm(ref)


@pytest.mark.parametrize("model", ["srm", "htfa", "drd", "brsa",
                                   "mnsrm", "dpsrm"])
def test_every_simulator_is_deterministic_and_finite(model):
    def run():
        if model == "srm":
            return simulate_srm(SimSpec(model=model, m_subjects=2,
                                        t_timepoints=15, v_voxels=10,
                                        k_factors=2, seed=33))[0]
        if model == "htfa":
            grid = VoxelGrid.regular((4, 4, 4))
            return simulate_htfa(SimSpec(model=model, m_subjects=2,
                                         t_timepoints=15, v_voxels=64,
                                         k_factors=2, seed=33), grid)[0]
        if model == "drd":
            X, y, _ = simulate_drd(SimSpec(model=model, t_timepoints=15,
                                           v_voxels=10, seed=33),
                                   np.arange(10, dtype=float))
            return [X, y]
        if model == "brsa":
            s = _four_condition_design(40)
            X, _ = simulate_brsa(SimSpec(model=model, t_timepoints=40,
                                         v_voxels=10, k_factors=4, seed=33),
                                 s, np.eye(4))
            return [X]
        return simulate_matnormal(SimSpec(model=model, m_subjects=2,
                                          t_timepoints=15, v_voxels=10,
                                          k_factors=2, seed=33),
                                  variant=model)[0]

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.all(np.isfinite(a))
        assert a.tobytes() == b.tobytes()
