import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from choice_lab.choiceprob import logit_jacobian, logit_kernel
from choice_lab.distributions import LogisticDiff, cdf_v
from choice_lab.model import ModelDims, UtilityModel, eval_delta, canonical_h
from choice_lab.report import DerivativeReport

utilities = arrays(np.float64, st.integers(2, 6), elements=st.floats(-30, 30))
finite = st.floats(-5, 5)


@given(utilities)
def test_logit_is_a_distribution(u):
    p = logit_kernel(u)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)


@given(utilities)
def test_logit_jacobian_symmetric_with_zero_rows(u):
    jac = logit_jacobian(u)
    np.testing.assert_allclose(jac, jac.T, atol=1e-15)
    np.testing.assert_allclose(jac.sum(axis=1), 0.0, atol=1e-12)


@given(utilities, st.floats(-10, 10))
def test_logit_shift_invariant(u, c):
    np.testing.assert_allclose(logit_kernel(u + c), logit_kernel(u), atol=1e-12)


@given(finite, finite, finite)
def test_logistic_cdf_monotone(xi, a, b):
    lo, hi = sorted((a, b))
    noise = LogisticDiff(xi)
    assert cdf_v(noise, lo) <= cdf_v(noise, hi)


@settings(max_examples=50)
@given(arrays(np.float64, 2, elements=finite), arrays(np.float64, 2, elements=finite), finite)
def test_binary_rc_is_additive(x, eta, v):
    model = UtilityModel("BinaryRC", ModelDims(d=2))
    assert eval_delta(model, x, eta, v) == canonical_h(model, x, eta) + v


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1e-6, 1e2))
def test_differ_mode_is_complement_of_se_band(lhs, rhs, se):
    equal = DerivativeReport("p", np.zeros(1), [lhs], [rhs], [se], tol_rel=0.0, tol_abs=0.0)
    differ = DerivativeReport("p", np.zeros(1), [lhs], [rhs], [se], mode="differ")
    assert equal.passed != differ.passed
