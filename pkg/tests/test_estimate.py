import numpy as np
import pytest

from choice_lab import rng as rngmod
from choice_lab.distributions import Heterogeneity, LogisticDiff, MultivariateNormal, PointMass
from choice_lab.errors import ConfigurationError, InsufficientDataError, SingularFitError
from choice_lab.estimate import (
    CrossSectionSample,
    KernelConfig,
    bandwidth_rule,
    estimate_direction,
    estimate_mean_coeff_ratio,
    kernel_weights,
    local_linear,
    local_linear_fit,
    panel_diag_estimator,
    simulate_cross_section,
    simulate_panel,
)
from choice_lab.model import ModelDims, UtilityModel
from choice_lab.panel import PanelDGP, angle_between, gaussian_x_law

X_LAW = MultivariateNormal([0.0, 0.0], np.eye(2))


@pytest.fixture
def gen():
    return rngmod.generator(0, "test")


class TestLocalLinear:
    def test_affine_response_is_exact(self, gen):
        X = gen.normal(size=(500, 2))
        R = 0.3 + X @ np.array([1.5, -2.0])
        fit = local_linear(X, R, [0.2, -0.1], np.array([0.5, 0.5]))
        np.testing.assert_allclose(fit.level, [0.3 + 0.3 + 0.2], atol=1e-12)
        np.testing.assert_allclose(fit.slope, [[1.5, -2.0]], atol=1e-12)
        np.testing.assert_allclose(fit.slope_se, 0.0, atol=1e-10)

    def test_flat_response_has_zero_slope(self, gen):
        X = gen.normal(size=(400, 1))
        fit = local_linear(X, np.full(400, 0.7), [0.0], np.array([0.5]))
        np.testing.assert_allclose(fit.slope, 0.0, atol=1e-12)

    @pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
    def test_kernels(self, gen, kernel):
        X = gen.normal(size=(2000, 1))
        R = np.sin(X[:, 0]) + 0.05 * gen.normal(size=2000)
        fit = local_linear(X, R, [0.0], np.array([0.3]), kernel)
        assert fit.slope[0, 0] == pytest.approx(1.0, abs=0.1)

    def test_insufficient_data(self, gen):
        X = gen.normal(size=(1000, 1))
        with pytest.raises(InsufficientDataError):
            local_linear(X, np.zeros(1000), [6.0], np.array([0.2]), "epanechnikov")

    def test_singular_design(self):
        X = np.column_stack([np.linspace(-1, 1, 200), np.zeros(200)])
        with pytest.raises(SingularFitError):
            local_linear(X, np.zeros(200), [0.0, 0.0], np.array([1.0, 1.0]))

    def test_epanechnikov_support(self):
        w = kernel_weights(np.array([[0.0], [0.5], [1.0], [2.0]]), "epanechnikov")
        np.testing.assert_allclose(w, [0.75, 0.5625, 0.0, 0.0])


class TestBandwidth:
    def test_rule_rates(self, gen):
        X = gen.normal(size=(10_000, 2)) * [1.0, 3.0]
        sd = X.std(axis=0, ddof=1)
        np.testing.assert_allclose(bandwidth_rule(X, "level"), 1.06 * sd * 10_000 ** (-1 / 6))
        np.testing.assert_allclose(bandwidth_rule(X, "derivative"), 1.06 * sd * 10_000 ** (-1 / 8))

    @pytest.mark.parametrize("kwargs", [{"kernel": "box"}, {"order": 2}, {"bandwidth": "optimal"},
                                        {"bandwidth": (0.5, -1.0)}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            KernelConfig(**kwargs)


class TestSamples:
    def test_simulation_is_deterministic(self):
        model = UtilityModel("BinaryRC", ModelDims(d=2))
        dists = Heterogeneity(MultivariateNormal([1.0, -2.0], np.eye(2)), LogisticDiff(0.0))
        a = simulate_cross_section(model, dists, X_LAW, 1000, seed=3)
        b = simulate_cross_section(model, dists, X_LAW, 1000, seed=3)
        assert a.to_csv() == b.to_csv()
        assert set(np.unique(a.Y)) <= {0, 1}

    def test_csv_round_trip(self):
        sample = CrossSectionSample(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([0, 1]), 2)
        back = CrossSectionSample.from_csv(sample.to_csv())
        np.testing.assert_array_equal(back.X, sample.X)
        np.testing.assert_array_equal(back.Y, sample.Y)

    def test_multinomial_indicators(self):
        sample = CrossSectionSample(np.zeros((3, 1)), np.array([2, 0, 1]), 3)
        np.testing.assert_array_equal(sample.indicators(), np.eye(3)[[2, 0, 1]])

    def test_x_law_dimension_checked(self):
        model = UtilityModel("BinaryRC", ModelDims(d=3))
        dists = Heterogeneity(PointMass([1.0, 1.0, 1.0]), LogisticDiff(0.0))
        with pytest.raises(ConfigurationError):
            simulate_cross_section(model, dists, X_LAW, 10, seed=0)


class TestRatio:
    def test_point_mass_ratio(self):
        model = UtilityModel("BinaryRC", ModelDims(d=2))
        dists = Heterogeneity(PointMass([1.0, -2.0]), LogisticDiff(0.0))
        sample = simulate_cross_section(model, dists, X_LAW, 50_000, seed=1)
        est = estimate_mean_coeff_ratio(sample, KernelConfig(), n_boot=100, seed=1)
        assert not est.flagged
        assert est.ci_low[0] <= -0.5 <= est.ci_high[0]
        assert est.components == [0]

    def test_zero_reference_is_flagged(self):
        model = UtilityModel("BinaryRC", ModelDims(d=2))
        dists = Heterogeneity(MultivariateNormal([1.0, 0.0], np.eye(2)), LogisticDiff(0.0))
        sample = simulate_cross_section(model, dists, X_LAW, 20_000, seed=2)
        est = estimate_mean_coeff_ratio(sample, KernelConfig(), n_boot=50, seed=2)
        assert est.flagged
        assert np.all(np.isnan(est.ratios))

    def test_binary_only(self):
        sample = CrossSectionSample(np.zeros((10, 1)), np.zeros(10, int), 3)
        with pytest.raises(ConfigurationError):
            estimate_mean_coeff_ratio(sample, KernelConfig())

    def test_level_fit_tracks_probability(self):
        model = UtilityModel("BinaryRC", ModelDims(d=2))
        dists = Heterogeneity(PointMass([1.0, -2.0]), LogisticDiff(0.0))
        sample = simulate_cross_section(model, dists, X_LAW, 50_000, seed=4)
        fit = local_linear_fit(sample, [0.0, 0.0], KernelConfig(bandwidth="level"))
        assert abs(fit.level[0] - 0.5) <= 4 * fit.level_se[0]


@pytest.fixture(scope="module")
def panel_sample():
    beta0 = np.array([2.0, 1.0, -1.0])
    G = 0.3 * beta0[None, :] / np.linalg.norm(beta0)
    dgp = PanelDGP(gaussian_x_law(3, sd=0.5, rho=0.8), [0.0], G, [[1.0]], LogisticDiff(0.0),
                   eta_mode="fixed", beta0=beta0, alpha_shift=[1.0])
    model = UtilityModel("BinaryRC", ModelDims(d=3))
    return simulate_panel(dgp, model, 100_000, seed=5), beta0


class TestPanelEstimator:
    def test_direction(self, panel_sample):
        data, beta0 = panel_sample
        points = [[-0.15, 0.0, 0.15], [0.0, 0.0, 0.0], [0.15, 0.0, -0.15]]
        b, rows = estimate_direction(data, points, KernelConfig(constant=2.0))
        assert rows.shape == (3, 3)
        assert angle_between(b, beta0) <= 0.1

    def test_diag_shapes(self, panel_sample):
        data, _ = panel_sample
        est = panel_diag_estimator(data, [0.0, 0.0, 0.0], KernelConfig(constant=2.0))
        assert est.slope_x2.shape == (1, 3)
        # the difference of stationary outcomes has mean near zero on the diagonal
        assert abs(est.intercept[0]) <= 4 * est.intercept_se[0]

    def test_point_dimension_checked(self, panel_sample):
        data, _ = panel_sample
        with pytest.raises(ConfigurationError):
            panel_diag_estimator(data, [0.0, 0.0], KernelConfig())
