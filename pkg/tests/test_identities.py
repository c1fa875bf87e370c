import numpy as np
import pytest
from scipy.special import expit

from choice_lab.choiceprob import IntegrationSpec
from choice_lab.distributions import EtaShifted, Heterogeneity, IIDGumbel, LogisticDiff, MultivariateNormal
from choice_lab.errors import ConfigurationError, UnsupportedError, WrongFamilyError
from choice_lab.identities import (
    berry_deriv_check,
    cor3_check,
    default_grid,
    hessian_check,
    index_check,
    kernel_rhs,
    kernel_smoothed_rhs,
    multinomial_rhs,
    thm1_rhs,
    thm2_rhs,
    thm4_check,
    verify_thm1,
    verify_thm2,
    weighted_avg_derivative,
)
from choice_lab.model import ModelDims, UtilityModel

BUNDLES = [np.zeros((3, 2)), np.array([[0.5, -0.5], [0.0, 0.3], [-0.4, 0.2]])]


def logistic_density(t):
    s = expit(t)
    return s * (1 - s)


class TestBinaryIdentities:
    def test_point_mass_rhs_closed_form(self, binary_rc, point_dists, gh):
        beta = np.array([1.0, -2.0])
        x = np.array([0.3, 0.4])
        np.testing.assert_allclose(thm2_rhs(binary_rc, point_dists, x, gh),
                                   logistic_density(beta @ x) * beta, atol=1e-15)

    def test_thm2_holds_on_default_grid(self, binary_rc, reference_dists, gh):
        reports = verify_thm2(binary_rc, reference_dists, None, gh)
        assert len(reports) == 25
        assert all(r.passed for r in reports)

    def test_thm1_kernel_path(self, binary_rc, reference_dists, gh):
        rhs_integ = IntegrationSpec(n_draws=1_000_000, seed=4)
        reports = verify_thm1(binary_rc, reference_dists, [np.array([0.2, 0.1])], gh,
                              rhs_integ=rhs_integ, path="kernel", tol_rel=0.05)
        assert reports[0].passed
        assert reports[0].metadata["bandwidth"] > 0

    def test_kernel_bias_shrinks_quadratically(self, binary_rc, reference_dists, gh):
        x = np.array([0.2, 0.1])
        exact = thm2_rhs(binary_rc, reference_dists, x, gh)
        err = [np.max(np.abs(kernel_smoothed_rhs(binary_rc, reference_dists, x, gh, b) - exact))
               for b in (0.4, 0.2)]
        assert err[0] / err[1] == pytest.approx(4.0, rel=0.1)

    def test_threshold_rhs_both_paths(self, binary_rc, reference_dists):
        integ = IntegrationSpec(n_draws=1_000_000, seed=9)
        rhs = thm1_rhs(binary_rc, reference_dists, np.array([0.0, 0.5]), integ)
        assert np.all(np.abs(rhs.analytic - rhs.kernel) <= 4 * np.hypot(rhs.analytic_se, rhs.kernel_se) + 2e-3)

    def test_bad_bandwidth(self, binary_rc, reference_dists):
        with pytest.raises(ConfigurationError):
            kernel_rhs(binary_rc, reference_dists, np.zeros(2), 100, 0, bandwidth=-1.0)
        with pytest.raises(ConfigurationError):
            verify_thm1(binary_rc, reference_dists, None, IntegrationSpec(), path="bogus")

    def test_rejects_multinomial(self, linear_rc3, gumbel_dists, gh):
        with pytest.raises(WrongFamilyError):
            verify_thm2(linear_rc3, gumbel_dists, None, gh)

    def test_nonadditive_model_is_unsupported(self, gh):
        model = UtilityModel("GeneralNonseparable", ModelDims(d=1), expr={
            "op": "mul", "args": [{"op": "eta", "i": 0}, {"op": "add", "args": [{"op": "x", "i": 0}, {"op": "v"}]}]})
        dists = Heterogeneity(MultivariateNormal([1.0], [[0.3]]), LogisticDiff(0.0))
        with pytest.raises(UnsupportedError):
            verify_thm1(model, dists, [np.array([0.3])], gh)


class TestOrigin:
    def test_cor3_values(self, binary_rc, reference_dists, gh):
        main, ratio = cor3_check(binary_rc, reference_dists, gh)
        np.testing.assert_allclose(main.rhs, [0.25, -0.5])
        assert main.passed
        np.testing.assert_allclose(ratio.lhs, [-0.5], atol=1e-8)

    def test_cor3_zero_reference_mean_is_skipped(self, binary_rc, gh):
        dists = Heterogeneity(MultivariateNormal([1.0, 0.0], np.eye(2)), LogisticDiff(0.0))
        reports = cor3_check(binary_rc, dists, gh)
        assert reports[1].status == "skipped"
        assert not reports[1].counts_as_failure

    def test_cor3_precondition_for_eta_dependent_noise(self, binary_rc, gh):
        dists = Heterogeneity(MultivariateNormal([1.0, -2.0], np.eye(2)), EtaShifted(LogisticDiff(0.0), [1.0, 0.0]))
        (rep,) = cor3_check(binary_rc, dists, gh)
        assert rep.status == "precondition_failed"

    def test_hessian_matches_second_moment(self, binary_rc, gh):
        dists = Heterogeneity(MultivariateNormal([1.0, -2.0], np.eye(2)), LogisticDiff(1.0))
        rep = hessian_check(binary_rc, dists, gh)
        e = np.e
        fvv = e * (e - 1) / (1 + e) ** 3
        np.testing.assert_allclose(rep.rhs, -fvv * np.array([[2.0, -2.0], [-2.0, 5.0]]))
        assert rep.passed


class TestIndex:
    def test_gradient_parallel_to_beta0(self, gh):
        model = UtilityModel("Index", ModelDims(d=2), {"beta0": [1.0, -2.0]}, expr={
            "op": "add", "args": [{"op": "mul", "args": [{"op": "eta", "i": 0}, {"op": "tanh", "arg": {"op": "index"}}]},
                                  {"op": "eta", "i": 1}]})
        dists = Heterogeneity(MultivariateNormal([1.5, 0.2], 0.5 * np.eye(2)), LogisticDiff(0.0))
        reports = index_check(model, dists, [np.array([0.5, 0.5])], gh)
        assert all(r.passed for r in reports)

    def test_wrong_family(self, binary_rc, reference_dists, gh):
        with pytest.raises(WrongFamilyError):
            index_check(binary_rc, reference_dists, None, gh)


class TestMultinomial:
    @pytest.mark.parametrize("bundle", BUNDLES)
    def test_thm4(self, linear_rc3, gumbel_dists, gh, bundle):
        rep = thm4_check(linear_rc3, gumbel_dists, bundle, gh)
        assert rep.passed
        assert rep.metadata["logit_form_gap"] < 1e-14

    def test_derivatives_sum_to_zero_over_alternatives(self, linear_rc3, gumbel_dists, gh):
        rhs, _, _ = multinomial_rhs(linear_rc3, gumbel_dists, BUNDLES[1], gh)
        np.testing.assert_allclose(rhs.sum(axis=0), 0.0, atol=1e-14)

    def test_berry_origin_scalar_multiple(self, linear_rc3, gumbel_dists, gh):
        reports = berry_deriv_check(linear_rc3, gumbel_dists, BUNDLES[0], gh)
        assert [r.label for r in reports] == ["berry", "berry_origin"]
        assert all(r.passed for r in reports)
        # p_jj(0) = 2/9 at equal intercepts, scaled by E[eta]
        np.testing.assert_allclose(reports[1].rhs[0, 0], 2 / 9 * np.array([1.0, -1.0]))

    def test_berry_away_from_origin_has_no_scalar_form(self, linear_rc3, gumbel_dists, gh):
        reports = berry_deriv_check(linear_rc3, gumbel_dists, BUNDLES[1], gh)
        assert [r.label for r in reports] == ["berry"]

    def test_berry_needs_linear_family(self, binary_rc, reference_dists, gh):
        with pytest.raises(WrongFamilyError):
            berry_deriv_check(binary_rc, reference_dists, np.zeros(2), gh)


class TestWeightedAverage:
    def test_gaussian_weight(self, binary_rc, reference_dists, gh):
        x_law = MultivariateNormal([0.0, 0.0], 0.25 * np.eye(2))
        rep = weighted_avg_derivative(binary_rc, reference_dists,
                                      lambda xs: np.exp(-0.5 * np.sum(xs ** 2, axis=1)),
                                      x_law, gh, n_x=200, n_joint=400_000, tol_rel=0.02)
        assert rep.passed


def test_default_grid_shape():
    grid = default_grid((2,))
    assert len(grid) == 25
    np.testing.assert_allclose(grid[0], [-1.5, -1.5])
    assert default_grid((3, 2), points=2)[0].shape == (3, 2)
