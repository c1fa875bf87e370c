"""Exception hierarchy shared by every module."""


class ChoiceLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ChoiceLabError, ValueError):
    """Invalid dimensions, parameters, steps or configuration documents."""


class WrongFamilyError(ChoiceLabError, TypeError):
    """Operation called on a model family that does not support it."""


class UnsupportedError(ChoiceLabError, NotImplementedError):
    """Requested method or model combination is not supported."""


class PreconditionError(ChoiceLabError):
    """A check precondition does not hold for the supplied design."""


class IdentificationError(ChoiceLabError):
    """The identifying side condition fails (all scaling factors vanish)."""


class SingularFitError(ChoiceLabError, ArithmeticError):
    """Local design matrix is rank deficient at the evaluation point."""

    def __init__(self, x0, message="rank-deficient local design"):
        self.x0 = x0
        super().__init__(f"{message} at x0={x0!r}")


class InsufficientDataError(ChoiceLabError):
    """Too few effective observations near the evaluation point."""
