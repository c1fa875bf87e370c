import numpy as np
import pytest

from choice_lab.choiceprob import IntegrationSpec
from choice_lab.distributions import Gaussian, IIDGumbel, LogisticDiff
from choice_lab.errors import ConfigurationError, IdentificationError, WrongFamilyError
from choice_lab.model import ModelDims, UtilityModel
from choice_lab.panel import (
    PanelDGP,
    angle_between,
    approach_pairs,
    cond_E_Yt,
    default_pairs,
    dgp_from_dict,
    direction_from_rows,
    equivalence_report,
    gaussian_x_law,
    stationarity_witness,
    thm8_check,
    thm9_recover_beta,
    thm10_gap,
    thm11_gap,
    verify_thm7,
)

GH = IntegrationSpec("gauss_hermite", nodes_per_dim=20)


def binary_dgp(G=0.5):
    return PanelDGP(gaussian_x_law(1, sd=0.5), [1.0], [[G]], [[0.5]], LogisticDiff(0.0))


def quadratic_dgp(mu_c=1.0, sigma_c=0.3, G_c=0.0):
    return PanelDGP(gaussian_x_law(1), [0.0, 1.0, mu_c], [[0.3], [0.2], [G_c]],
                    np.diag([1.0, 0.5, sigma_c]), Gaussian(0.0, 0.5))


def fixed_multinomial_dgp(xi=(0.0, 0.0, 0.0)):
    model = UtilityModel("LinearRC", ModelDims(J=3, d=2, choice_specific=True), {"xi": list(xi)})
    dgp = PanelDGP(gaussian_x_law(6, sd=0.5), [0.0, 0.0, 0.0], 0.1 * np.ones((3, 6)), 0.5 * np.eye(3),
                   IIDGumbel(), eta_mode="fixed", beta0=[1.0, -0.5], alpha_shift=np.eye(3))
    return model, dgp


BINARY = UtilityModel("BinaryRC", ModelDims(d=1))
QUADRATIC = UtilityModel("QuadraticScalar", ModelDims(d=1))


class TestConditionalMeans:
    def test_period_must_be_one_or_two(self):
        with pytest.raises(ConfigurationError):
            cond_E_Yt(binary_dgp(), BINARY, [0.0], [0.0], 3, GH)

    def test_periods_agree_on_the_diagonal(self):
        y1 = cond_E_Yt(binary_dgp(), BINARY, [0.4], [0.4], 1, GH)
        y2 = cond_E_Yt(binary_dgp(), BINARY, [0.4], [0.4], 2, GH)
        assert float(y1.value) == float(y2.value)


class TestDiagonalIdentity:
    def test_binary_identity_and_bias(self):
        reports = verify_thm7(binary_dgp(), BINARY, [[-0.5], [0.0], [0.8]], GH)
        assert [r.label for r in reports[:2]] == ["thm7", "thm7_het_bias"]
        assert all(r.passed for r in reports if r.status == "ok")
        # at x = 0 the period-1 index is zero whatever alpha is
        assert [r.status for r in reports if r.label == "thm7_het_bias"] == ["ok", "skipped", "ok"]

    def test_bias_vanishes_without_dependence(self):
        reports = verify_thm7(binary_dgp(G=0.0), BINARY, [[0.3]], GH)
        assert reports[0].passed
        assert reports[1].status == "skipped"

    def test_binary_identity_needs_binary_model(self):
        model, dgp = fixed_multinomial_dgp()
        with pytest.raises(WrongFamilyError):
            verify_thm7(dgp, model, [np.zeros((3, 2))], GH)

    def test_multinomial_identity(self):
        model = UtilityModel("LinearRC", ModelDims(J=3, d=1, choice_specific=True), {"xi": [0.0, 0.0, 0.0]})
        dgp = PanelDGP(gaussian_x_law(3, sd=0.5), [1.0], [[0.2, 0.1, -0.1]], [[0.5]], IIDGumbel())
        reports = thm8_check(dgp, model, [np.zeros((3, 1)), np.array([[0.5], [0.0], [-0.3]])], GH)
        labels = [r.label for r in reports]
        assert "thm8_berry_origin" in labels
        assert all(r.passed for r in reports if r.status == "ok")


class TestDirection:
    def test_recovers_beta0(self):
        model, dgp = fixed_multinomial_dgp()
        diag = [np.zeros((3, 2)), np.array([[0.5, -0.5], [0.0, 0.3], [-0.4, 0.2]])]
        result, report = thm9_recover_beta(dgp, model, diag, GH)
        assert result.angle < 1e-6
        assert report.passed

    def test_vanishing_scalars_raise(self):
        model, dgp = fixed_multinomial_dgp(xi=(100.0, 0.0, -100.0))
        with pytest.raises(IdentificationError):
            thm9_recover_beta(dgp, model, [np.zeros((3, 2))], GH)

    def test_direction_sign_follows_own_rows(self):
        rows = np.array([[-2.0, 1.0], [-4.0, 2.0]])
        b, s = direction_from_rows(rows, np.array([True, False]))
        assert rows[0] @ b > 0
        assert s[1] == pytest.approx(0.0, abs=1e-12)
        assert angle_between(b, [2.0, -1.0]) == pytest.approx(np.pi, abs=1e-7)


class TestStationarity:
    def test_witness_passes(self):
        assert stationarity_witness(binary_dgp(), BINARY, n=40_000, seed=3)["pass"]


class TestNonidentification:
    def test_equivalent_linear_model_is_exact(self):
        rep = equivalence_report(quadratic_dgp(), QUADRATIC, 20_000, seed=1)
        assert rep.passed and rep.lhs[0] < 1e-12

    def test_equivalent_binary_model_reproduces_choices(self):
        dgp = PanelDGP(gaussian_x_law(1), [0.0, 1.0, 1.0], np.zeros((3, 1)), np.diag([1.0, 0.5, 0.3]),
                       LogisticDiff(0.0), transitory=False)
        rep = equivalence_report(dgp, QUADRATIC, 20_000, seed=1, binary=True)
        assert rep.metadata["indicators_equal"] and rep.passed

    def test_gap_is_linear_in_pair_spacing(self):
        reports = thm10_gap(quadratic_dgp(), QUADRATIC, default_pairs(gaps=(1.0, 0.5)), GH)
        gaps = [r for r in reports if r.label == "thm10_gap"]
        for r in gaps:
            assert r.passed
            a_minus_b = r.metadata["A_difference_quotient"] - r.metadata["B_derivative"]
            assert a_minus_b == pytest.approx(r.metadata["expected_gap"], abs=1e-12)
        ratio = (gaps[0].lhs - gaps[0].rhs) / (gaps[1].lhs - gaps[1].rhs)
        assert float(ratio[0]) == pytest.approx(2.0, rel=1e-10)

    def test_remainder_is_quadratic(self):
        reports = thm10_gap(quadratic_dgp(), QUADRATIC, default_pairs(gaps=(1.0, 0.5)), GH)
        rem = [float(r.lhs[0]) for r in reports if r.label == "thm10_remainder"]
        assert rem[0] / rem[1] == pytest.approx(4.0, rel=1e-10)

    def test_linear_control_has_no_gap(self):
        reports = thm10_gap(quadratic_dgp(mu_c=0.0, sigma_c=0.0), QUADRATIC, default_pairs(), GH)
        assert all(r.passed and r.mode == "equal" for r in reports)

    def test_binary_gap(self):
        dgp = PanelDGP(gaussian_x_law(1), [0.0, 1.0, 1.0], np.zeros((3, 1)), np.diag([1.0, 0.5, 0.3]),
                       LogisticDiff(0.0), transitory=False)
        reports = thm11_gap(dgp, QUADRATIC, [(-0.5, 0.5)], IntegrationSpec(n_draws=200_000, seed=2))
        assert reports[0].mode == "differ" and reports[0].passed

    def test_rejects_diagonal_pair(self):
        with pytest.raises(ConfigurationError):
            thm10_gap(quadratic_dgp(), QUADRATIC, [(0.3, 0.3)], GH)

    def test_pair_helpers(self):
        assert default_pairs(gaps=(1.0,)) == [(-0.5, 0.5)]
        gaps = [b - a for a, b in approach_pairs(start=1.0, halvings=3)]
        np.testing.assert_allclose(gaps, [1.0, 0.5, 0.25, 0.125])


class TestConstruction:
    def test_odd_regressor_dimension(self):
        from choice_lab.distributions import MultivariateNormal
        with pytest.raises(ConfigurationError):
            PanelDGP(MultivariateNormal([0.0], [[1.0]]), [1.0], [[0.5]], [[0.5]], LogisticDiff(0.0))

    def test_fixed_mode_needs_coefficients(self):
        with pytest.raises(ConfigurationError):
            PanelDGP(gaussian_x_law(1), [1.0], [[0.5]], [[0.5]], LogisticDiff(0.0), eta_mode="fixed")

    def test_from_dict(self):
        dgp = dgp_from_dict({"p": 2, "x_law": {"kind": "uniform_square"}, "mu": [0.0], "G": [[0.1, 0.2]],
                             "Sigma": [[1.0]], "noise": {"kind": "LogisticDiff", "xi": 0.0}})
        assert dgp.p == 2
        with pytest.raises(ConfigurationError, match="mu"):
            dgp_from_dict({"x_law": {"kind": "uniform_square"}})
