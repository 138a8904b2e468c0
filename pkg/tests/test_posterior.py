import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixedlgp.model import ORDINAL, MetricSpec, ModelConfig
from mixedlgp.posterior import (
    Draws,
    effective_range,
    multiple_correlation,
    percent_contribution,
    posterior_ranks,
    predict_H,
    predict_Y,
)
from mixedlgp.sampler import ChainSettings, run_chain
from mixedlgp.stochastics import distance_matrix, exp_correlation

from conftest import fake_draws, make_problem


def ordinal_config(J=1, K=5):
    return ModelConfig(tuple(MetricSpec(f"m{j}", ORDINAL, K) for j in range(J)))


class TestPredictH:
    def test_far_site_is_prior(self, rng):
        cfg = ordinal_config()
        coords = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
        X = np.array([[1.0], [0.0], [-1.0]])
        T = 40_000
        d = fake_draws(cfg, T, 3, beta=0.5, phi1=2.0, phi2=3.0, H=rng.standard_normal((T, 3)))
        Ht = predict_H(d, coords, X, [[1e4, 1e4]], [[2.0]], rng)
        assert Ht.mean() == pytest.approx(1.0, abs=0.03)
        assert Ht.var() == pytest.approx(2.0, rel=0.03)

    def test_coincident_site_returns_observed(self, rng):
        cfg = ordinal_config()
        coords = rng.uniform(0, 1, (5, 2))
        X = rng.standard_normal((5, 1))
        H = rng.standard_normal((7, 5))
        d = fake_draws(cfg, 7, 5, beta=0.3, H=H)
        Ht = predict_H(d, coords, X, coords[[2, 4]], X[[2, 4]], rng)
        np.testing.assert_array_equal(Ht, H[:, [2, 4]])

    def test_kriging_moments(self, rng):
        cfg = ordinal_config()
        coords = rng.uniform(0, 1, (6, 2))
        X = rng.standard_normal((6, 1))
        H0 = rng.standard_normal(6)
        T = 50_000
        d = fake_draws(cfg, T, 6, beta=0.7, phi1=1.5, phi2=2.0, H=np.tile(H0, (T, 1)))
        new = np.array([[0.5, 0.5]])
        Xn = np.array([[0.3]])
        Ht = predict_H(d, coords, X, new, Xn, rng)[:, 0]
        S = 1.5 * exp_correlation(distance_matrix(coords), 2.0)
        c = 1.5 * exp_correlation(distance_matrix(new, coords), 2.0)[0]
        mean = 0.3 * 0.7 + c @ np.linalg.solve(S, H0 - 0.7 * X[:, 0])
        var = 1.5 - c @ np.linalg.solve(S, c)
        assert Ht.mean() == pytest.approx(mean, abs=4 * np.sqrt(var / T))
        assert Ht.var() == pytest.approx(var, rel=0.03)

    def test_variance_shrinks_toward_observed_site(self):
        cfg = ordinal_config()
        coords = np.array([[0.0, 0.0], [1.0, 0.0]])
        X = np.zeros((2, 1))
        d = fake_draws(cfg, 20_000, 2, phi2=2.0)
        variances = []
        for eps in (0.5, 0.2, 0.05, 0.01, 0.001):
            Ht = predict_H(d, coords, X, [[eps, 0.0]], [[0.0]], np.random.default_rng(0))
            variances.append(Ht.var())
        assert all(a > b for a, b in zip(variances, variances[1:]))
        assert variances[-1] < 0.01


class TestPredictY:
    def test_deterministic_limit(self, rng):
        cfg = ordinal_config()
        lam_mid = 0.5 * (1.0 + 2.0)  # between lambda_2 = 1 and lambda_3 = 2
        d = fake_draws(cfg, 200, 3, theta=lam_mid, omega=0.0, sigma2=1e-8)
        pred = predict_Y(np.zeros((200, 4)), d, cfg, rng)
        assert np.all(pred.point_prediction() == 3)

    def test_probabilities_sum_to_one(self, rng):
        cfg = ordinal_config(J=2)
        d = fake_draws(cfg, 500, 3, theta=[1.0, 2.0], omega=[1.0, -0.5], sigma2=[1.0, 2.0])
        pred = predict_Y(rng.standard_normal((500, 6)), d, cfg, rng)
        np.testing.assert_allclose(pred.category_probabilities().sum(axis=-1), 1.0)
        assert set(np.unique(pred.Y_tilde)) <= {1, 2, 3, 4, 5}

    def test_interval_ordering(self, rng):
        cfg = ordinal_config()
        d = fake_draws(cfg, 300, 3)
        pred = predict_Y(rng.standard_normal((300, 5)), d, cfg, rng)
        med, lo, hi = pred.Y_interval()
        assert np.all(lo <= med) and np.all(med <= hi)
        m, l, h = pred.H_summary()
        assert np.all(l <= m) and np.all(m <= h)

    def test_frequencies_match_training_data(self):
        """Posterior predictive category frequencies at the fitted sites."""
        prob = make_problem(n=40, K=4, seed=2)
        tr = run_chain(prob, ChainSettings(iters=1500, burnin=500, thin_z=0, seed=0))
        d = Draws.from_traces([tr])
        pred = predict_Y(d.H, d, prob.config, np.random.default_rng(0))
        freq = pred.category_probabilities()[:, 0, :].mean(axis=0)
        obs = np.bincount(prob.data.Y[:, 0].astype(int), minlength=5)[1:] / 40
        np.testing.assert_allclose(freq, obs, atol=0.08)


class TestRanks:
    def test_constant_draws(self):
        r = posterior_ranks(np.tile([3.0, 1.0, 2.0], (5, 1)))
        np.testing.assert_array_equal(r.median_rank, [3, 1, 2])
        np.testing.assert_allclose(r.percentile, np.array([3, 1, 2]) / 4)

    def test_ties_average(self):
        r = posterior_ranks(np.array([[1.0, 1.0, 0.0]]))
        np.testing.assert_array_equal(r.ranks[0], [2.5, 2.5, 1.0])

    def test_affine_invariance(self, rng):
        H = rng.standard_normal((20, 8))
        a, b = posterior_ranks(H), posterior_ranks(2 * H + 7)
        np.testing.assert_array_equal(a.ranks, b.ranks)

    @given(arrays(np.float64, (4, 6), elements=st.floats(-1e3, 1e3)),
           st.sampled_from([np.exp, np.tanh, lambda x: x ** 3, lambda x: 5 * x - 2]))
    def test_monotone_transform_invariance(self, H, f):
        H = np.round(H, 3)
        a, b = posterior_ranks(H), posterior_ranks(f(H / 1e3))
        for t in range(4):
            np.testing.assert_array_equal(np.argsort(a.ranks[t], kind="stable"),
                                          np.argsort(b.ranks[t], kind="stable"))

    @given(arrays(np.float64, (3, 7), elements=st.floats(-50, 50)))
    def test_percentiles_open_unit_interval(self, H):
        r = posterior_ranks(H)
        assert np.all((r.percentile > 0) & (r.percentile < 1))


class TestCorrelation:
    def test_perfect_linearity(self, rng):
        H = rng.standard_normal(50)
        c = multiple_correlation(np.column_stack([2 * H + 7, -H])[None], H[None])
        np.testing.assert_allclose(c.R[0], [1.0, 1.0])

    def test_independent_noise(self, rng):
        H = rng.standard_normal(20_000)
        c = multiple_correlation(rng.standard_normal((20_000, 1))[None], H[None])
        assert c.R[0, 0] < 0.03

    def test_zero_variance_column(self, rng):
        H = rng.standard_normal(10)
        c = multiple_correlation(np.column_stack([np.ones(10), H])[None], H[None])
        assert np.isnan(c.R[0, 0]) and c.R[0, 1] == pytest.approx(1.0)

    def test_matches_pearson(self, rng):
        Z = rng.standard_normal((3, 30, 2))
        H = rng.standard_normal((3, 30))
        c = multiple_correlation(Z, H)
        for t in range(3):
            for j in range(2):
                assert c.R[t, j] == pytest.approx(abs(np.corrcoef(Z[t, :, j], H[t])[0, 1]))

    def test_r2m_is_regression_r2(self, rng):
        Z = rng.standard_normal((200, 3))
        H = Z @ [1.0, -0.5, 0.2] + rng.standard_normal(200)
        c = multiple_correlation(Z[None], H[None])
        design = np.column_stack([np.ones(200), Z])
        fit = design @ np.linalg.lstsq(design, H, rcond=None)[0]
        r2 = 1 - np.sum((H - fit) ** 2) / np.sum((H - H.mean()) ** 2)
        assert c.R2_M[0] == pytest.approx(r2)

    @settings(max_examples=50)
    @given(arrays(np.float64, (2, 12, 3), elements=st.floats(-10, 10).map(lambda x: round(x, 2))),
           arrays(np.float64, (2, 12), elements=st.floats(-10, 10).map(lambda x: round(x, 2))),
           st.floats(0.1, 10), st.floats(-5, 5))
    def test_range_and_affine_invariance(self, Z, H, a, b):
        c = multiple_correlation(Z, H)
        ok = np.isfinite(c.R)
        assert np.all((c.R[ok] >= 0) & (c.R[ok] <= 1))
        c2 = multiple_correlation(a * Z + b, -a * H + b)
        np.testing.assert_allclose(c2.R[ok], c.R[ok], atol=1e-6)
        rows = np.all(ok, axis=1) & (c.R.sum(axis=1) > 0)
        np.testing.assert_allclose(c.contribution[rows].sum(axis=1), 1.0)


class TestContribution:
    def test_equal(self):
        np.testing.assert_allclose(percent_contribution(np.full((1, 5), 0.4)), 0.2)

    def test_all_zero_undefined(self):
        assert np.all(np.isnan(percent_contribution(np.zeros((1, 3)))))

    def test_table3_style_weights(self):
        R = np.array([[0.80, 0.84, 0.58, 0.28, 0.96]])
        w = percent_contribution(R)[0]
        np.testing.assert_allclose(w.sum(), 1.0)
        np.testing.assert_allclose(np.round(w, 2), [0.23, 0.24, 0.17, 0.08, 0.28])


class TestEffectiveRange:
    def test_values(self):
        assert round(effective_range([15.76])["median"], 4) == 0.1904
        assert effective_range([3.0])["median"] == 1.0

    def test_interval(self):
        er = effective_range(np.linspace(2, 4, 101))
        assert er["lo"] <= er["median"] <= er["hi"]
