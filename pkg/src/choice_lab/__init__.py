"""Simulation and verification lab for derivative identities in nonseparable choice models.

The modules build on each other:

``model`` / ``distributions``
    utility families and heterogeneity laws;
``choiceprob``
    choice probabilities by Monte Carlo or Gauss-Hermite quadrature, with
    common-random-number finite differences;
``identities``, ``controlfn``, ``panel``
    derivative identities for cross sections, control-function designs and
    two-period panels, reported as ``DerivativeReport`` objects;
``estimate``
    local linear kernel estimators on simulated samples;
``cli`` / ``config``
    the config-driven command line.
"""
from .choiceprob import IntegrationSpec, binary_choice_prob, choice_prob
from .config import ExperimentConfig, load_config
from .distributions import (
    EtaShifted,
    FiniteMixture,
    Gaussian,
    Heterogeneity,
    IIDGumbel,
    LogisticDiff,
    MultivariateNormal,
    PointMass,
    UniformBox,
)
from .errors import (
    ChoiceLabError,
    ConfigurationError,
    IdentificationError,
    InsufficientDataError,
    PreconditionError,
    SingularFitError,
    UnsupportedError,
    WrongFamilyError,
)
from .model import ModelDims, UtilityModel
from .report import DerivativeReport

__version__ = "0.1.0"

__all__ = [
    "ChoiceLabError", "ConfigurationError", "DerivativeReport", "EtaShifted", "ExperimentConfig",
    "FiniteMixture", "Gaussian", "Heterogeneity", "IIDGumbel", "IdentificationError",
    "InsufficientDataError", "IntegrationSpec", "LogisticDiff", "ModelDims", "MultivariateNormal",
    "PointMass", "PreconditionError", "SingularFitError", "UniformBox", "UnsupportedError",
    "UtilityModel", "WrongFamilyError", "binary_choice_prob", "choice_prob", "load_config",
]
