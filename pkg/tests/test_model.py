import numpy as np
import pytest

from choice_lab.errors import ConfigurationError, WrongFamilyError
from choice_lab.model import (
    ModelDims,
    UtilityModel,
    canonical_h,
    eval_delta,
    eval_utilities,
    gradient_discrepancy,
    grad_x_delta,
    grad_x_utilities,
    max_gradient_norm,
    model_from_dict,
    model_to_dict,
)

ETA = lambda i: {"op": "eta", "i": i}  # noqa: E731
X = lambda i: {"op": "x", "i": i}  # noqa: E731
TANH = UtilityModel("GeneralNonseparable", ModelDims(d=1),
                    expr={"op": "tanh", "arg": {"op": "mul", "args": [ETA(0), X(0)]}})


class TestBinaryEvaluation:
    def test_affine(self):
        m = UtilityModel("BinaryRC", ModelDims(d=2))
        assert eval_delta(m, [1.0, 0.0], [2.0, -1.0], 0.5) == pytest.approx(2.5)

    def test_zero_regressor(self):
        m = UtilityModel("BinaryRC", ModelDims(d=3))
        assert eval_delta(m, np.zeros(3), [0.3, -4.0, 2.0], -0.7) == pytest.approx(-0.7)
        assert canonical_h(m, np.zeros(3), [1.0, 2.0, 3.0]) == 0.0

    def test_tanh_grammar(self):
        assert eval_delta(TANH, [0.0], [1.7], 0.3) == pytest.approx(0.3)
        np.testing.assert_allclose(grad_x_delta(TANH, [0.0], [1.7]), [1.7])
        assert canonical_h(TANH, [0.4], [1.7]) == pytest.approx(np.tanh(0.68))

    def test_additivity_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, eta, v = rng.normal(size=1), rng.normal(size=1), rng.normal()
            assert eval_delta(TANH, x, eta, v) == canonical_h(TANH, x, eta) + v

    def test_dimension_mismatch(self):
        m = UtilityModel("BinaryRC", ModelDims(d=2))
        with pytest.raises(ConfigurationError):
            eval_delta(m, [1.0, 2.0, 3.0], [1.0, 1.0], 0.0)

    def test_multinomial_family_rejected(self):
        m = UtilityModel("LinearRC", ModelDims(J=3, d=1, choice_specific=True))
        with pytest.raises(WrongFamilyError):
            eval_delta(m, np.zeros((3, 1)), [1.0], 0.0)


class TestUtilities:
    def test_zero_bundle(self):
        m = UtilityModel("LinearRC", ModelDims(J=2, d=1, choice_specific=True), {"xi": [0.0, 0.0]})
        np.testing.assert_allclose(eval_utilities(m, np.zeros((2, 1)), [1.3]), [0.0, 0.0])

    def test_affine_with_intercepts(self):
        m = UtilityModel("LinearRC", ModelDims(J=2, d=1, choice_specific=True), {"xi": [1.0, 0.0]})
        np.testing.assert_allclose(eval_utilities(m, [[2.0], [-1.0]], [1.0]), [3.0, -1.0])

    def test_intercepts_at_origin(self):
        m = UtilityModel("LinearRC", ModelDims(J=3, d=2, choice_specific=True), {"xi": [0.5, -1.0, 2.0]})
        np.testing.assert_allclose(eval_utilities(m, np.zeros((3, 2)), [4.0, -3.0]), [0.5, -1.0, 2.0])

    def test_gradient_shape(self):
        m = UtilityModel("LinearRC", ModelDims(J=3, d=2, choice_specific=True))
        g = grad_x_utilities(m, np.ones((3, 2)), [2.0, -1.0])
        assert g.shape == (3, 3, 2)
        np.testing.assert_allclose(g[1, 1], [2.0, -1.0])
        np.testing.assert_allclose(g[1, 0], [0.0, 0.0])


class TestGradients:
    def test_binary_rc_gradient_is_eta(self):
        m = UtilityModel("BinaryRC", ModelDims(d=2))
        np.testing.assert_allclose(grad_x_delta(m, [5.0, -3.0], [0.2, 0.7]), [0.2, 0.7])

    def test_quadratic_phi(self):
        m = UtilityModel("QuadraticScalar", ModelDims(d=1))
        phi, g = m.phi_and_grad(np.array([2.0]), np.array([[1.0, 0.5, -0.25]]))
        assert phi[0] == pytest.approx(1.0 + 1.0 - 1.0)
        assert g[0] == pytest.approx(0.5 - 1.0)

    @pytest.mark.parametrize("family_doc", [
        {"family": "BinaryRC", "dims": {"d": 3}},
        {"family": "GeneralNonseparable", "dims": {"d": 2},
         "expr": {"op": "add", "args": [{"op": "sigmoid", "arg": {"op": "mul", "args": [ETA(0), X(0)]}},
                                        {"op": "pow", "arg": X(1), "n": 2},
                                        {"op": "mul", "args": [ETA(1), {"op": "tanh", "arg": X(0)}]}]}},
        {"family": "Index", "dims": {"d": 2}, "params": {"beta0": [2.0, 1.0]},
         "expr": {"op": "mul", "args": [ETA(0), {"op": "tanh", "arg": {"op": "index"}}]}},
    ])
    def test_analytic_matches_finite_differences(self, family_doc):
        m = model_from_dict(family_doc)
        rng = np.random.default_rng(1)
        for _ in range(100):
            x = rng.uniform(-1.5, 1.5, size=m.x_shape)
            eta = rng.normal(size=max(m.eta_dim, 1))
            assert gradient_discrepancy(m, x, eta) <= 1e-6

    def test_bounded_gradient_witness(self):
        xs = np.linspace(-3, 3, 50)[:, None]
        etas = np.array([[0.5], [-2.0]])
        assert max_gradient_norm(TANH, xs, etas) <= 2.0 + 1e-12


class TestSerialisation:
    def test_round_trip(self):
        m = UtilityModel("LinearRC", ModelDims(J=3, d=2, choice_specific=True), {"xi": [0.1, 0.2, 0.3]})
        back = model_from_dict(model_to_dict(m))
        assert back.family == m.family and back.dims == m.dims
        np.testing.assert_allclose(back.params["xi"], [0.1, 0.2, 0.3])

    def test_bad_document(self):
        with pytest.raises(ConfigurationError):
            model_from_dict({"dims": {"d": 1}})
        with pytest.raises(ConfigurationError):
            ModelDims(J=1)
