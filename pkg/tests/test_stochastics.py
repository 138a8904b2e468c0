import numpy as np
import pytest
from scipy.stats import invgamma, truncnorm

from mixedlgp.stochastics import (
    CovarianceError,
    chol_factor,
    distance_matrix,
    exp_covariance,
    gamma_sample,
    inv_gamma_sample,
    mvn_sample,
    mvn_sample_precision,
    truncated_normal_median,
    truncated_normal_moments,
    truncated_normal_sample,
)

INF = np.inf

# (mu, sigma2, lo, hi): one-sided, two-sided, far tails and +-8 sd shifts
TN_GRID = [
    (0.0, 1.0, -INF, 0.0),
    (0.0, 1.0, 0.0, INF),
    (0.0, 1.0, -1.0, 1.0),
    (1.73, 1.0, 0.0, 1.81),
    (1.73, 1.0, 4.71, INF),
    (3.80, 2.75, -INF, 0.0),
    (0.0, 1.0, 8.0, INF),
    (0.0, 1.0, -INF, -8.0),
    (0.0, 1.0, 8.0, 9.0),
    (0.0, 1.0, -9.0, -8.0),
    (-8.0, 1.0, 0.0, INF),
    (8.0, 1.0, -INF, 0.0),
    (0.0, 1.0, 5.0, 5.5),
    (0.0, 1.0, 6.0, INF),
    (0.0, 1.0, -INF, INF),
    (2.0, 0.5, 1.0, 1.2),
    (0.0, 1.0, -0.1, 0.1),
    (0.5, 1.41, 0.4, 0.6),
    (-1.0, 1.0, 2.0, 3.0),
    (3.62, 1.41, 1.81, 3.26),
]


class TestDistances:
    def test_345(self):
        assert distance_matrix([[0, 0], [3, 4]])[0, 1] == 5.0

    def test_single_point(self):
        D = distance_matrix([[1.0, 2.0]])
        assert D.shape == (1, 1) and D[0, 0] == 0.0

    def test_brute_force(self, rng):
        P = rng.uniform(-5, 5, (10, 2))
        D = distance_matrix(P)
        ref = np.array([[np.sqrt((P[i, 0] - P[l, 0]) ** 2 + (P[i, 1] - P[l, 1]) ** 2)
                         for l in range(10)] for i in range(10)])
        np.testing.assert_allclose(D, ref, rtol=0, atol=1e-12)
        assert np.all(D == D.T) and np.all(np.diag(D) == 0)

    def test_cross(self):
        D = distance_matrix([[0, 0]], [[3, 4], [0, 1]])
        np.testing.assert_array_equal(D, [[5.0, 1.0]])


class TestCovariance:
    def test_zero_distance(self):
        assert exp_covariance(np.zeros((1, 1)), 2.5, 3.0).Sigma[0, 0] == 2.5

    def test_effective_range_value(self):
        c = exp_covariance(np.array([[0.1904]]), 1.0, 15.76).Sigma[0, 0]
        assert c == pytest.approx(np.exp(-0.1904 * 15.76))
        assert round(c, 4) == 0.0498

    def test_correlation_at_effective_range(self):
        phi2 = 15.76
        c = exp_covariance(np.array([[3 / phi2]]), 1.0, phi2).Sigma[0, 0]
        assert c == pytest.approx(np.exp(-3)) and c < 0.05

    def test_linear_in_phi1(self, rng):
        D = distance_matrix(rng.uniform(0, 1, (5, 2)))
        np.testing.assert_array_equal(exp_covariance(D, 2.0, 3.0).Sigma,
                                      2.0 * exp_covariance(D, 1.0, 3.0).Sigma)

    def test_positive_parameters(self):
        with pytest.raises(ValueError):
            exp_covariance(np.zeros((1, 1)), 0.0, 1.0)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_allclose(chol_factor(np.eye(3)), np.eye(3), atol=1e-9)

    def test_hand_case(self):
        L = chol_factor(np.array([[4.0, 2.0], [2.0, 3.0]]))
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=1e-9)

    def test_reconstruction(self, rng):
        A = rng.standard_normal((20, 20))
        S = A @ A.T + 20 * np.eye(20)
        L = chol_factor(S)
        assert np.max(np.abs(L @ L.T - S)) / np.max(np.abs(S)) < 1e-8

    def test_duplicated_site_is_rescued_by_jitter(self):
        D = distance_matrix([[0, 0], [0, 0], [1, 1]])
        L = chol_factor(exp_covariance(D, 1.0, 2.0).Sigma)
        assert np.all(np.isfinite(L))

    def test_not_pd(self):
        with pytest.raises(CovarianceError, match="covariance not PD"):
            chol_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestMVN:
    def test_zero_factor_returns_mean(self, rng):
        m = np.array([1.0, -2.0])
        np.testing.assert_array_equal(mvn_sample(m, np.zeros((2, 2)), rng), m)

    def test_covariance(self, rng):
        L = np.array([[1.0, 0.0], [0.6, 0.8]])
        draws = np.array([mvn_sample(np.zeros(2), L, rng) for _ in range(100_000)])
        C = np.cov(draws.T)
        np.testing.assert_allclose(C, L @ L.T, rtol=0.05, atol=0.02)

    def test_seeded(self):
        L = np.eye(3)
        a = mvn_sample(np.zeros(3), L, np.random.default_rng(5))
        b = mvn_sample(np.zeros(3), L, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_precision_form(self, rng):
        Q = np.array([[2.0, 0.5], [0.5, 1.0]])
        b = np.array([1.0, -1.0])
        draws = []
        for _ in range(50_000):
            x, mean = mvn_sample_precision(b, Q, rng)
            draws.append(x)
        # the factorisation ridge perturbs the solve at the 1e-10 level
        np.testing.assert_allclose(mean, np.linalg.solve(Q, b), rtol=1e-8)
        np.testing.assert_allclose(np.cov(np.array(draws).T), np.linalg.inv(Q), rtol=0.05)


class TestTruncatedNormal:
    def test_half_normal_mean(self):
        rng = np.random.default_rng(0)
        z = truncated_normal_sample(np.zeros(10 ** 6), 1.0, -INF, 0.0, rng)
        assert abs(z.mean() + np.sqrt(2 / np.pi)) < 0.003
        assert np.all(z <= 0.0)

    def test_untruncated(self, rng):
        z = truncated_normal_sample(np.zeros(200_000), 1.0, -INF, INF, rng)
        assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.02

    def test_symmetric_interval(self, rng):
        z = truncated_normal_sample(np.zeros(200_000), 1.0, -1.3, 1.3, rng)
        assert abs(z.mean()) < 0.01

    @pytest.mark.parametrize("mu, s2, lo, hi", TN_GRID)
    def test_moments_grid(self, mu, s2, lo, hi):
        rng = np.random.default_rng(hash((mu, s2, lo, hi)) % 2 ** 32)
        N = 200_000
        z = truncated_normal_sample(np.full(N, mu), s2, lo, hi, rng)
        assert np.all((z > lo) & (z <= hi))
        sd = np.sqrt(s2)
        m, v = truncnorm.stats((lo - mu) / sd, (hi - mu) / sd, loc=mu, scale=sd, moments="mv")
        se_mean = np.sqrt(v / N)
        se_var = np.sqrt(np.mean((z - z.mean()) ** 4) - z.var() ** 2) / np.sqrt(N)
        assert abs(z.mean() - m) < 3 * se_mean
        assert abs(z.var() - v) < 3 * se_var

    @pytest.mark.parametrize("mu, s2, lo, hi", TN_GRID)
    def test_analytic_moments_match_scipy(self, mu, s2, lo, hi):
        sd = np.sqrt(s2)
        m, v = truncnorm.stats((lo - mu) / sd, (hi - mu) / sd, loc=mu, scale=sd, moments="mv")
        mm, vv = truncated_normal_moments(mu, s2, lo, hi)
        assert mm == pytest.approx(float(m), rel=1e-6, abs=1e-9)
        assert vv == pytest.approx(float(v), rel=1e-4, abs=1e-9)

    def test_top_category_cell(self, rng):
        mu, lo = 1.73, 4.71
        z = truncated_normal_sample(np.full(100_000, mu), 1.0, lo, INF, rng)
        m, v = truncnorm.stats(lo - mu, INF, loc=mu, moments="mv")
        assert abs(z.mean() - m) < 3 * np.sqrt(v / len(z))

    def test_far_tail_finite(self, rng):
        z = truncated_normal_sample(np.zeros(1000), 1.0, 40.0, INF, rng)
        assert np.all(np.isfinite(z)) and np.all(z > 40.0)

    def test_degenerate_interval_returns_midpoint(self, rng):
        z = truncated_normal_sample(0.0, 1.0, 1.0, 1.0 + 1e-13, rng)
        assert z == pytest.approx(1.0 + 0.5e-13, abs=1e-15)

    def test_scalar_in_scalar_out(self, rng):
        assert isinstance(truncated_normal_sample(0.0, 1.0, 0.0, 1.0, rng), float)

    def test_seeded(self):
        a = truncated_normal_sample(np.zeros(5), 1.0, 0.0, 2.0, np.random.default_rng(9))
        b = truncated_normal_sample(np.zeros(5), 1.0, 0.0, 2.0, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("mu, s2, lo, hi", TN_GRID)
    def test_median_matches_scipy(self, mu, s2, lo, hi):
        sd = np.sqrt(s2)
        ref = truncnorm.median((lo - mu) / sd, (hi - mu) / sd, loc=mu, scale=sd)
        assert truncated_normal_median(mu, s2, lo, hi) == pytest.approx(ref, rel=1e-7, abs=1e-7)


class TestGammaFamily:
    def test_inv_gamma_mean(self, rng):
        x = inv_gamma_sample(3.0, 2.0, rng, size=10 ** 6)
        assert x.mean() == pytest.approx(1.0, rel=0.01)

    def test_inv_gamma_law(self, rng):
        x = inv_gamma_sample(4.0, 3.0, rng, size=200_000)
        qs = [0.1, 0.5, 0.9]
        np.testing.assert_allclose(np.quantile(x, qs), invgamma.ppf(qs, 4.0, scale=3.0), rtol=0.01)

    def test_gamma_mean(self, rng):
        x = gamma_sample(2.0, 2.0, rng, size=10 ** 6)
        assert x.mean() == pytest.approx(1.0, rel=0.01)

    def test_seeded(self):
        a = inv_gamma_sample(3.0, 2.0, np.random.default_rng(1), size=4)
        b = inv_gamma_sample(3.0, 2.0, np.random.default_rng(1), size=4)
        np.testing.assert_array_equal(a, b)
