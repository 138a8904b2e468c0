import warnings

import numpy as np
import pytest

from mixedlgp.model import ORDINAL, map_to_ordinal
from mixedlgp.simulation import SimConfig, coverage_report, interval_capture, simulate_dataset
from mixedlgp.stochastics import distance_matrix

from conftest import fake_draws


@pytest.fixture(scope="module")
def default_sim():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return simulate_dataset(SimConfig())


class TestSimulate:
    def test_paper_design(self, default_sim):
        fit, holdout, truth = default_sim
        assert fit.n == 200 and holdout.n == 100
        assert truth.coords.shape == (300, 2)
        assert truth.coords.min() >= 0 and truth.coords.max() <= 3
        assert fit.J == 3 and fit.p == 2
        assert len(set(fit.site_ids) | set(holdout.site_ids)) == 300

    def test_truth_round_trip(self, default_sim):
        _, _, truth = default_sim
        for j in range(3):
            np.testing.assert_array_equal(map_to_ordinal(truth.Z[:, j], truth.cfg.lam), truth.Y[:, j])

    def test_fit_covariates_standardized(self, default_sim):
        fit, _, _ = default_sim
        np.testing.assert_allclose(fit.X.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(fit.X.std(axis=0, ddof=1), 1)

    def test_seeded(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = simulate_dataset(SimConfig(seed=5, n_fit=30, m_pred=5))[2]
            b = simulate_dataset(SimConfig(seed=5, n_fit=30, m_pred=5))[2]
        np.testing.assert_array_equal(a.Y, b.Y)
        np.testing.assert_array_equal(np.bincount(a.Y[:, 0].astype(int)),
                                      np.bincount(b.Y[:, 0].astype(int)))

    def test_noise_metrics(self):
        cfg = SimConfig(n_fit=3000, m_pred=0, omega=(1.0, 0.0, 0.0), theta=(1.73, 2.0, 2.0),
                        sigma2=(1.0, 1.0, 1.0), phi2=50.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, _, truth = simulate_dataset(cfg)
        for j in (1, 2):
            assert abs(np.corrcoef(truth.Z[:, j], truth.H)[0, 1]) < 0.06

    def test_empty_category_warns(self):
        cfg = SimConfig(n_fit=20, m_pred=0, theta=(-5.0, -5.0, -5.0), omega=(1.0, 0.1, 0.1))
        with pytest.warns(UserWarning, match="category never observed"):
            simulate_dataset(cfg)

    def test_invalid_truth(self):
        with pytest.raises(ValueError):
            SimConfig(lam_interior=(0.5, 1.0, 2.0, 3.0))
        with pytest.raises(ValueError):
            SimConfig(omega=(2.0, 1.0, 1.0))

    def test_field_correlation_beyond_effective_range(self):
        # empirical correlation of H between pairs near distance 3/phi2
        cfg = SimConfig(n_fit=2000, m_pred=0, beta=(0.0, 0.0), domain=3.0)
        corrs = []
        for seed in range(5):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, _, t = simulate_dataset(SimConfig(**{**cfg.__dict__, "seed": seed}))
            D = distance_matrix(t.coords)
            i, l = np.nonzero(np.abs(D - 3 / cfg.phi2) < 0.01)
            keep = i < l
            corrs.append(np.mean(t.H[i[keep]] * t.H[l[keep]]))
        assert np.mean(corrs) <= 0.07


class TestCoverage:
    def test_interval_capture(self):
        draws = np.linspace(0, 1, 1001)[:, None]
        lo, hi, ok = interval_capture(draws, np.array([0.5]))
        assert ok[0] and lo[0] == pytest.approx(0.025) and hi[0] == pytest.approx(0.975)
        assert not interval_capture(draws, np.array([0.99]))[2][0]

    def test_report_with_truth_as_draws(self, default_sim):
        from mixedlgp.posterior import PredictionResult

        fit, _, truth = default_sim
        cfg = truth.cfg.model_config()
        c = truth.cfg
        T = 50
        rng = np.random.default_rng(0)
        from mixedlgp.model import lambda_to_alpha
        d = fake_draws(cfg, T, fit.n, p=2, beta=np.array(c.beta) + 0.01 * rng.standard_normal((T, 2)),
                       theta=np.array(c.theta) + 0.01 * rng.standard_normal((T, 3)),
                       omega=c.omega, sigma2=c.sigma2, phi2=c.phi2 * (1 + 0.01 * rng.standard_normal(T)),
                       alpha=lambda_to_alpha(c.lam))
        H_ho = truth.H[truth.holdout_index]
        Y_ho = truth.Y[truth.holdout_index]
        pred = PredictionResult(H_ho + 0.01 * rng.standard_normal((T, 100)),
                                np.tile(Y_ho, (T, 1, 1)), np.ones(3, bool), 5)
        rep = coverage_report(truth, d, cfg, pred)
        assert rep.exact_rate == 1.0 and rep.within1_rate == 1.0
        assert rep.confusion.sum() == 300 and np.trace(rep.confusion) == 300
        assert rep.h_coverage >= 0.9
        names = [r["name"] for r in rep.parameters]
        assert names[:2] == ["beta_1", "beta_2"] and "lambda_4" in names
        assert rep.n_captured + len(rep.missed) == len(rep.parameters)
