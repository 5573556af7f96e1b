"""Exception hierarchy.

Every error raised deliberately by the library derives from ``AsymGameError``
so the CLI can map them to exit code 1 with a one-line message.
"""


class AsymGameError(Exception):
    """Base class for library errors."""


class ModelError(AsymGameError):
    pass


class DimensionMismatch(ModelError):
    pass


class DefinitenessViolation(ModelError):
    pass


class AsymmetryBeyondTolerance(ModelError):
    pass


class ParseError(ModelError):
    pass


class FilterError(AsymGameError):
    pass


class SingularInnovation(FilterError):
    pass


class SingularWeightBlock(FilterError):
    pass


class CoupledSystemSingular(FilterError):
    pass


class CovarianceIndefinite(FilterError):
    pass


class GameError(AsymGameError):
    pass


class ConvexityViolation(GameError):
    """Q11 is not positive definite: the minimizer's stage problem is not convex."""


class ConcavityViolation(GameError):
    """Q22 is not negative definite: the upper value is unbounded."""


class SchurSingular(GameError):
    pass


class GainConsistencyError(GameError):
    """The two algebraically equal gain routes disagree."""


class UnstableClosedLoop(AsymGameError):
    pass


class IndefiniteCovariance(AsymGameError):
    pass


class MaxIterExceeded(AsymGameError):
    """Raised only when the caller asks for it; solvers normally return a flagged result."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
