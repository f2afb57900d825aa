import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cfda.gmm import (
    FitConfig,
    FitError,
    MixtureModel,
    bic,
    fit_em,
    gaussian_density,
    log_mixture_density,
    max_component_score,
    mixture_density,
)

from .helpers import random_mixture


class TestGaussianDensity:
    def test_standard_peak(self):
        assert gaussian_density([0.0], [0.0], [[1.0]]) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-9)

    def test_bivariate_peak(self):
        assert gaussian_density([1.0, 2.0], [1.0, 2.0], np.eye(2)) == pytest.approx(1 / (2 * math.pi), abs=1e-9)

    def test_unit_distance(self):
        direct = math.exp(-0.5) / math.sqrt(2 * math.pi)
        assert gaussian_density([1.0], [0.0], [[1.0]]) == pytest.approx(direct, abs=1e-12)
        assert direct == pytest.approx(0.24197, abs=1e-5)

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(3, 3))
        sigma = A @ A.T + np.eye(3)
        mu = rng.normal(size=3)
        xi = rng.normal(size=(20, 3))
        np.testing.assert_allclose(
            gaussian_density(xi, mu, sigma), stats.multivariate_normal(mu, sigma).pdf(xi), rtol=1e-12
        )

    def test_non_spd(self):
        with pytest.raises(np.linalg.LinAlgError):
            gaussian_density([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


class TestMixtureModel:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            MixtureModel([0.5, 0.6], np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_json_roundtrip(self):
        m = random_mixture(np.random.default_rng(1), K=3)
        back = MixtureModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.means, m.means)
        np.testing.assert_array_equal(back.covariances, m.covariances)
        np.testing.assert_array_equal(back.weights, m.weights)


class TestScores:
    def test_single_component_is_gaussian(self):
        m = MixtureModel([1.0], [[0.5, -1.0]], [[[2.0, 0.3], [0.3, 1.0]]])
        xi = np.random.default_rng(2).normal(size=(10, 2))
        expected = gaussian_density(xi, m.means[0], m.covariances[0])
        np.testing.assert_allclose(mixture_density(m, xi), expected, rtol=1e-12)
        np.testing.assert_allclose(max_component_score(m, xi), expected, rtol=1e-12)

    def test_identical_components(self):
        cov = np.array([[1.0, 0.2], [0.2, 0.5]])
        m = MixtureModel([0.5, 0.5], [[1.0, 1.0], [1.0, 1.0]], [cov, cov])
        xi = np.array([0.3, 2.0])
        assert mixture_density(m, xi) == pytest.approx(gaussian_density(xi, [1.0, 1.0], cov), abs=1e-12)

    def test_tails_decrease(self):
        m = random_mixture(np.random.default_rng(3), K=3)
        direction = np.array([0.6, 0.8])
        # both underflow in linear scale, so compare logs
        assert log_mixture_density(m, 1e4 * direction) < log_mixture_density(m, 1e3 * direction)
        assert np.isfinite(log_mixture_density(m, 1e4 * direction))
        radii = np.linspace(20, 1000, 50)
        logs = [log_mixture_density(m, r * direction) for r in radii]
        assert np.all(np.diff(logs) < 0)

    def test_sandwich(self):
        rng = np.random.default_rng(4)
        m = random_mixture(rng, K=4)
        xi = rng.normal(scale=3.0, size=(10_000, 2))
        top = max_component_score(m, xi)
        total = mixture_density(m, xi)
        assert np.all(top <= total * (1 + 1e-12))
        assert np.all(total <= m.K * top * (1 + 1e-12))

    def test_peak_of_separated_component(self):
        m = MixtureModel(
            [0.6, 0.4], [[0.0, 0.0], [50.0, 0.0]], [np.eye(2), [[2.0, 0.0], [0.0, 1.0]]]
        )
        for k in range(2):
            peak = m.weights[k] / (2 * math.pi * math.sqrt(np.linalg.det(m.covariances[k])))
            assert max_component_score(m, m.means[k]) == pytest.approx(peak, rel=1e-6)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_sandwich_property(self, seed):
        rng = np.random.default_rng(seed)
        m = random_mixture(rng, K=int(rng.integers(1, 5)))
        xi = rng.normal(scale=4.0, size=(50, 2))
        top = max_component_score(m, xi)
        total = mixture_density(m, xi)
        assert np.all(top > 0) and np.all(np.isfinite(total))
        assert np.all(top <= total * (1 + 1e-12))
        assert np.all(total <= m.K * top * (1 + 1e-12))


class TestFitEM:
    def test_single_component_equals_sample_moments(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2000, 2)) @ np.array([[1.0, 0.0], [0.4, 0.8]]) + [1.0, -2.0]
        m = fit_em(x, FitConfig(K=1, restarts=1))
        np.testing.assert_allclose(m.means[0], x.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(m.covariances[0], np.cov(x.T, bias=True), atol=1e-8)

    def test_single_spherical_gaussian(self):
        x = np.random.default_rng(1).normal(size=(2000, 2))
        m = fit_em(x, FitConfig(K=1))
        assert np.linalg.norm(m.means[0]) < 0.1
        assert np.linalg.norm(m.covariances[0] - np.eye(2), 2) < 0.1

    def test_two_separated_components(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, 2000)
        x = rng.normal(size=(2000, 2)) + np.where(labels[:, None] == 0, [5.0, 0.0], [-5.0, 0.0])
        m = fit_em(x, FitConfig(K=2))
        np.testing.assert_allclose(m.weights, 0.5, atol=0.05)
        found = sorted(m.means.tolist())
        np.testing.assert_allclose(found, [[-5.0, 0.0], [5.0, 0.0]], atol=0.2)

    def test_loglik_monotone(self):
        rng = np.random.default_rng(3)
        x = np.vstack([rng.normal(size=(150, 2)), rng.normal(size=(100, 2)) + [2.0, 1.0]])
        m = fit_em(x, FitConfig(K=3, restarts=3, max_iter=300))
        hist = np.array(m.loglik_history)
        assert hist.size > 2
        assert np.all(np.diff(hist) >= -1e-8 * np.abs(hist[:-1]))

    def test_covariance_floor(self):
        rng = np.random.default_rng(4)
        x = np.c_[rng.normal(size=100), np.zeros(100)]
        m = fit_em(x, FitConfig(K=1, reg_floor=1e-3))
        assert np.linalg.eigvalsh(m.covariances[0]).min() >= 1e-3 - 1e-15

    def test_default_floor_is_relative(self):
        rng = np.random.default_rng(5)
        x = 1e3 * rng.normal(size=(60, 2))
        x[:, 1] = 0.0
        m = fit_em(x, FitConfig(K=1))
        floor = 1e-6 * np.trace(np.cov(x.T, bias=True)) / 2
        assert np.linalg.eigvalsh(m.covariances[0]).min() >= floor * (1 - 1e-9)

    def test_deterministic(self):
        x = np.random.default_rng(6).normal(size=(300, 2))
        a = fit_em(x, FitConfig(K=3, seed=11))
        b = fit_em(x, FitConfig(K=3, seed=11))
        assert a.means.tobytes() == b.means.tobytes()
        assert a.covariances.tobytes() == b.covariances.tobytes()
        assert a.weights.tobytes() == b.weights.tobytes()

    def test_components_sorted_by_weight(self):
        rng = np.random.default_rng(7)
        x = np.vstack([rng.normal(size=(300, 2)), rng.normal(size=(100, 2)) + 8, rng.normal(size=(200, 2)) - 8])
        m = fit_em(x, FitConfig(K=3))
        assert np.all(np.diff(m.weights) <= 0)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_em(np.zeros((8, 2)), FitConfig(K=3))

    def test_all_restarts_collapse(self):
        # only two distinct points: a third component always empties out
        x = np.repeat([[0.0, 0.0], [1.0, 1.0]], 10, axis=0)
        with pytest.raises(FitError):
            fit_em(x, FitConfig(K=3, restarts=2, collapse_retries=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FitConfig(restarts=0)
        with pytest.raises(ValueError):
            FitConfig(tol=0)
        with pytest.raises(ValueError):
            FitConfig(reg_floor=-1.0)

    def test_bic_prefers_true_k(self):
        rng = np.random.default_rng(8)
        x = np.vstack([rng.normal(size=(300, 2)) - 4, rng.normal(size=(300, 2)) + 4])
        scores = [bic(fit_em(x, FitConfig(K=k)), x) for k in (1, 2)]
        assert scores[1] < scores[0]
