"""Structured covariance families: materialization, solves, gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import assert_grad_close, fd_gradient, random_spd
from neuropgm.covariance import (AR1, DenseSPD, Diagonal, SEKernel,
                                 ScaledIdentity, cov_materialize)
from neuropgm.errors import DimensionMismatch, NotSPD


def _all_specs(rng, n):
    pts = rng.standard_normal((n, 3)) * 2.0
    return [
        ScaledIdentity(1.7),
        Diagonal(rng.uniform(0.5, 3.0, size=n)),
        AR1(1.3, 0.6),
        AR1(0.8, -0.45),
        DenseSPD(random_spd(rng, n)),
        SEKernel(pts, rho=1.5, ell=1.2, jitter=1e-6),
    ]


# --- materialization ---------------------------------------------------

def test_ar1_zero_phi_is_identity():
    assert np.array_equal(cov_materialize(AR1(1.0, 0.0), 3), np.eye(3))


def test_ar1_entries_follow_lag_power():
    got = cov_materialize(AR1(1.0, 0.5), 2)
    assert np.allclose(got, [[1.0, 0.5], [0.5, 1.0]], rtol=0, atol=0)


def test_ar1_inverse_matches_dense_oracle():
    spec = AR1(1.0, 0.5)
    dense_inv = np.linalg.inv(cov_materialize(spec, 2))
    got = spec.solve(np.eye(2), 2)
    assert np.max(np.abs(got - dense_inv)) < 1e-12


def test_ar1_inverse_is_tridiagonal():
    spec = AR1(2.3, 0.7)
    n = 9
    inv = spec.solve(np.eye(n), n)
    mask = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) > 1
    assert np.max(np.abs(inv[mask])) < 1e-10 * np.max(np.abs(inv))


def test_sekernel_unit_distance_ratio():
    # two points at distance ell * sqrt(2): exponent is exactly -1
    ell = 0.9
    pts = np.array([[0.0], [ell * np.sqrt(2.0)]])
    K = cov_materialize(SEKernel(pts, rho=1.0, ell=ell, jitter=0.0))
    assert abs(K[0, 1] - np.exp(-1.0)) < 1e-12
    assert np.allclose(np.diag(K), 1.0)


def test_materialize_dimension_checks():
    with pytest.raises(DimensionMismatch):
        cov_materialize(ScaledIdentity(1.0))  # free size needs n
    with pytest.raises(DimensionMismatch):
        cov_materialize(Diagonal([1.0, 2.0]), 3)
    with pytest.raises(DimensionMismatch):
        SEKernel(np.zeros((4, 2)), 1.0, 1.0).materialize(5)


def test_invalid_parameters_rejected():
    with pytest.raises(NotSPD):
        ScaledIdentity(0.0)
    with pytest.raises(NotSPD):
        Diagonal([1.0, -2.0])
    with pytest.raises(NotSPD):
        AR1(1.0, 1.0)
    with pytest.raises(NotSPD):
        DenseSPD(np.array([[1.0, 2.0], [2.0, 1.0]]))  # indefinite
    with pytest.raises(NotSPD):
        DenseSPD(np.array([[1.0, 0.5], [0.0, 1.0]]))  # asymmetric
    with pytest.raises(NotSPD):
        SEKernel(np.zeros((2, 1)), rho=-1.0, ell=1.0)


# --- factorization and solves ------------------------------------------

def test_materialize_cholesky_roundtrip_all_variants():
    rng = np.random.default_rng(7)
    n = 6
    for spec in _all_specs(rng, n):
        dense = cov_materialize(spec, n)
        L = spec.cholesky_lower(n)
        assert np.tril(L).shape == L.shape and np.allclose(L, np.tril(L))
        err = np.max(np.abs(L @ L.T - dense))
        assert err < 1e-10 * max(1.0, np.max(np.abs(dense)))


def test_solve_and_logdet_match_dense_oracle():
    rng = np.random.default_rng(21)
    n = 7
    B = rng.standard_normal((n, 3))
    for spec in _all_specs(rng, n):
        dense = cov_materialize(spec, n)
        assert abs(spec.logdet(n) - np.linalg.slogdet(dense)[1]) < 1e-9
        got = spec.solve(B, n)
        want = np.linalg.solve(dense, B)
        assert np.max(np.abs(got - want)) < 1e-9
        # 1-D right-hand sides keep their shape
        v = spec.solve(B[:, 0], n)
        assert v.shape == (n,)
        assert np.max(np.abs(v - want[:, 0])) < 1e-9


@settings(max_examples=30, deadline=None)
@given(variance=st.floats(0.05, 50.0),
       phi=st.floats(-0.95, 0.95),
       n=st.integers(1, 12))
def test_ar1_solve_property(variance, phi, n):
    spec = AR1(variance, phi)
    dense = cov_materialize(spec, n)
    rng = np.random.default_rng(3)
    b = rng.standard_normal(n)
    want = np.linalg.solve(dense, b)
    assert np.allclose(spec.solve(b, n), want, rtol=1e-9, atol=1e-9)
    L = spec.cholesky_lower(n)
    assert np.allclose(L @ L.T, dense, rtol=1e-10, atol=1e-10 * variance)


# --- unconstrained parameterization ------------------------------------

def test_unconstrained_roundtrip():
    rng = np.random.default_rng(5)
    n = 5
    for spec in _all_specs(rng, n):
        eta = spec.unconstrained()
        rebuilt = spec.with_unconstrained(eta)
        assert np.allclose(cov_materialize(rebuilt, n),
                           cov_materialize(spec, n), rtol=1e-12, atol=1e-12)


def test_chain_cov_grad_matches_finite_differences():
    rng = np.random.default_rng(11)
    n = 5
    G = random_spd(rng, n, scale=0.3)  # arbitrary symmetric "upstream" grad
    for spec in _all_specs(rng, n):
        def f(eta, spec=spec):
            return float(np.sum(G * cov_materialize(
                spec.with_unconstrained(eta), n)))
        analytic = spec.chain_cov_grad(G, n)
        numeric = fd_gradient(f, spec.unconstrained())
        assert_grad_close(analytic, numeric, rtol=1e-6)
