import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hiergp.errors import DomainError, NumericalError
from hiergp.gp import (GramBundle, Matern32Kernel, MeanFunction, condition, gaussian_log_density,
                       gp_predict, gram_matrix, jittered_cholesky, matern32)

from oracles import brute_condition, brute_gp_predict, dense_kernel


@pytest.mark.parametrize("d, a, l, expected", [
    (0.5, 1.0, 1.0, 0.784887653957450654),
    (1.0, 2.0, 0.5, 0.558925400769258684),
    (0.0, 1.5, 3.0, 2.25),
    (2.0, 0.7, 1.3, 0.125017853810951744),
])
def test_matern_reference_values(d, a, l, expected):
    assert matern32(d, a, l) == pytest.approx(expected, rel=1e-14)


def test_matern_vectorised_and_decreasing():
    d = np.linspace(0, 5, 50)
    k = matern32(d, 1.3, 0.8)
    assert k.shape == d.shape
    assert np.all(np.diff(k) < 0)
    assert k[0] == pytest.approx(1.69)


@pytest.mark.parametrize("args", [(-0.1, 1, 1), (1, 0, 1), (1, 1, -2), (np.nan, 1, 1),
                                  (1, 1, np.inf)])
def test_matern_domain_errors(args):
    with pytest.raises(DomainError):
        matern32(*args)


def test_kernel_rejects_bad_hypers():
    with pytest.raises(DomainError):
        Matern32Kernel(0.0, 1.0)
    with pytest.raises(DomainError):
        Matern32Kernel(1.0, float("nan"))


def test_gram_matrix_against_dense(rng):
    x = rng.uniform(size=(7, 2))
    k = Matern32Kernel(0.9, 0.4)
    noise = rng.uniform(0.1, 0.5, 7)
    G = gram_matrix(x, k, noise)
    np.testing.assert_allclose(G, dense_kernel(x, x, 0.9, 0.4) + np.diag(noise ** 2), rtol=1e-13)
    assert np.array_equal(G, G.T)
    with pytest.raises(DomainError):
        gram_matrix(x, k, noise[:3])


def test_mean_functions():
    x = np.array([0.0, 1.0, 2.5])
    np.testing.assert_array_equal(MeanFunction.zero()(x), 0.0)
    np.testing.assert_array_equal(MeanFunction.constant(-0.9)(x), -0.9)
    np.testing.assert_allclose(MeanFunction.linear(2.0, 0.5)(x), [0.5, 2.5, 5.5])
    with pytest.raises(DomainError):
        MeanFunction.linear(1, 0)(np.ones((3, 2)))
    with pytest.raises(DomainError):
        MeanFunction("quadratic")


def test_jitter_ladder_prefers_bare_matrix(rng):
    A = rng.normal(size=(5, 5))
    S = A @ A.T + 5 * np.eye(5)
    L, jitter = jittered_cholesky(S)
    assert jitter == 0.0
    np.testing.assert_allclose(L @ L.T, S, rtol=1e-12)


def test_jitter_ladder_rescues_singular_matrix():
    x = np.array([[0.0], [0.0], [1.0]])  # duplicate input -> rank deficient
    K = Matern32Kernel(1.0, 1.0)(x)
    L, jitter = jittered_cholesky(K)
    assert jitter > 0
    assert np.all(np.isfinite(L))


def test_jitter_ladder_exhaustion_reports_condition_number():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(NumericalError, match="condition number"):
        jittered_cholesky(bad)
    with pytest.raises(NumericalError):
        jittered_cholesky(np.array([[np.nan]]))


def test_gram_bundle(rng):
    A = rng.normal(size=(4, 4))
    S = A @ A.T + np.eye(4)
    r = rng.normal(size=4)
    b = GramBundle.from_covariance(S, r)
    np.testing.assert_allclose(b.alpha_vec, np.linalg.solve(S, r), rtol=1e-10)
    np.testing.assert_allclose(b.inverse(), np.linalg.inv(S), rtol=1e-9, atol=1e-12)
    assert b.log_det == pytest.approx(np.linalg.slogdet(S)[1], rel=1e-12)
    np.testing.assert_allclose(b.reconstruct(), S, rtol=1e-12)


def test_gaussian_log_density_standard_normal():
    b = GramBundle.from_covariance(np.eye(1))
    assert gaussian_log_density([0.0], [0.0], b) == pytest.approx(-0.918938533204672742)
    b = GramBundle.from_covariance(4.0 * np.eye(2))
    expected = 2 * (-0.5 * math.log(2 * math.pi * 4) - 0.5 * 1.0 / 4)
    assert gaussian_log_density([1.0, -1.0], [0.0, 0.0], b) == pytest.approx(expected)
    with pytest.raises(DomainError):
        gaussian_log_density([0.0, 1.0], [0.0, 0.0], GramBundle.from_covariance(np.eye(1)))


def test_condition_matches_brute_force(rng):
    for _ in range(20):
        nx, ny = rng.integers(1, 4), rng.integers(1, 6)
        M = rng.normal(size=(nx + ny, nx + ny))
        S = M @ M.T + 0.5 * np.eye(nx + ny)
        mu = rng.normal(size=nx + ny)
        y = rng.normal(size=ny)
        A, B, C = S[:nx, :nx], S[nx:, nx:], S[:nx, nx:]
        m, c = condition(mu[:nx], mu[nx:], A, B, C, y)
        m2, c2 = brute_condition(mu[:nx], mu[nx:], A, B, C, y)
        np.testing.assert_allclose(m, m2, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(c, c2, rtol=1e-9, atol=1e-12)
        assert np.array_equal(c, c.T)


def test_condition_errors():
    with pytest.raises(NumericalError):
        condition([0.0], [0.0], [[1.0]], [[-1.0]], [[0.5]], [1.0])
    with pytest.raises(DomainError):
        condition([0.0], [0.0, 0.0], [[1.0]], [[1.0]], [[0.5]], [1.0])


def test_condition_on_nothing_returns_prior():
    m, c = condition([1.0, 2.0], np.zeros(0), np.eye(2), np.zeros((0, 0)), np.zeros((2, 0)),
                     np.zeros(0))
    np.testing.assert_array_equal(m, [1.0, 2.0])
    np.testing.assert_array_equal(c, np.eye(2))


def test_gp_predict_matches_brute_force(rng):
    for _ in range(10):
        n, m = 6, 3
        xt, xs = rng.uniform(size=(n, 2)), rng.uniform(size=(m, 2))
        yt = rng.normal(size=n)
        noise = rng.uniform(0.05, 0.3, n)
        noise_s = rng.uniform(0.05, 0.3, m)
        k = Matern32Kernel(1.2, 0.6)
        mu, cov = gp_predict(xt, yt, xs, k, noise, noise_s)
        mu2, cov2 = brute_gp_predict(xt, yt, xs, 1.2, 0.6, noise, noise_s)
        np.testing.assert_allclose(mu, mu2, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(cov, cov2, rtol=1e-9, atol=1e-12)
        _, var = gp_predict(xt, yt, xs, k, noise, noise_s, full_cov=False)
        np.testing.assert_allclose(var, np.diag(cov2), rtol=1e-9)


def test_gp_predict_with_linear_mean_and_no_data():
    k = Matern32Kernel(1.0, 1.0)
    mean = MeanFunction.linear(2.0, -1.0)
    mu, cov = gp_predict(np.zeros((0, 1)), np.zeros(0), [0.5, 1.0], k, mean=mean)
    np.testing.assert_allclose(mu, [0.0, 1.0])
    np.testing.assert_allclose(cov, k([0.5, 1.0]))


def test_gp_predict_interpolates_noiseless():
    x = np.array([[0.1], [0.4], [0.9]])
    y = np.array([1.0, -0.5, 0.3])
    mu, var = gp_predict(x, y, x, Matern32Kernel(1.0, 0.3), full_cov=False)
    np.testing.assert_allclose(mu, y, atol=1e-6)
    assert np.all(var < 1e-6)


@given(st.integers(1, 6), st.integers(1, 3), st.floats(0.2, 3.0), st.floats(0.05, 2.0),
       st.integers(0, 2 ** 31))
def test_predictive_variance_bounded_by_prior(n, m, amp, ls, seed):
    r = np.random.default_rng(seed)
    xt, xs = r.uniform(size=(n, 2)), r.uniform(size=(m, 2))
    _, var = gp_predict(xt, r.normal(size=n), xs, Matern32Kernel(amp, ls),
                        np.full(n, 0.1), full_cov=False)
    assert np.all(var >= 0)
    assert np.all(var <= amp ** 2 * (1 + 1e-9))


@given(arrays(float, (5, 2), elements=st.floats(-3, 3)), st.floats(0.1, 5), st.floats(0.1, 5))
def test_kernel_matrix_positive_semidefinite(x, amp, ls):
    K = Matern32Kernel(amp, ls)(x)
    assert np.allclose(K, K.T)
    assert np.min(np.linalg.eigvalsh(K)) > -1e-9 * amp ** 2
