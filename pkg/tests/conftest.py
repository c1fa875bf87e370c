import numpy as np
import pytest

from choice_lab.choiceprob import IntegrationSpec
from choice_lab.distributions import Heterogeneity, IIDGumbel, LogisticDiff, MultivariateNormal, PointMass
from choice_lab.model import ModelDims, UtilityModel


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo checks")


@pytest.fixture
def binary_rc():
    return UtilityModel("BinaryRC", ModelDims(J=2, d=2))


@pytest.fixture
def reference_dists():
    """eta ~ N((1, -2), I) with logistic v: the reference binary design."""
    return Heterogeneity(MultivariateNormal([1.0, -2.0], np.eye(2)), LogisticDiff(0.0))


@pytest.fixture
def point_dists():
    return Heterogeneity(PointMass([1.0, -2.0]), LogisticDiff(0.0))


@pytest.fixture
def linear_rc3():
    return UtilityModel("LinearRC", ModelDims(J=3, d=2, choice_specific=True), {"xi": [0.0, 0.0, 0.0]})


@pytest.fixture
def gumbel_dists():
    return Heterogeneity(MultivariateNormal([1.0, -1.0], [[0.5, 0.1], [0.1, 0.5]]), IIDGumbel())


@pytest.fixture
def gh():
    return IntegrationSpec("gauss_hermite", nodes_per_dim=20)


@pytest.fixture
def mc():
    return IntegrationSpec("monte_carlo", n_draws=200_000, seed=11)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"acceptance {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:>2}. {'PASS' if ok else 'FAIL'}  {detail}")
