"""Exception hierarchy shared by every module."""


class TruncEstimError(Exception):
    """Base class for all library errors."""


class DimensionError(TruncEstimError, ValueError):
    pass


class InvalidParameters(TruncEstimError, ValueError):
    """Natural parameters outside the family's parameter space."""


class DegenerateMoments(TruncEstimError, ValueError):
    """Moment vector with no matching member of the family."""


class RejectionBudgetExceeded(TruncEstimError, RuntimeError):
    """A rejection sampler used up its proposal budget.

    Usually means the survival set has (near) zero mass under the current
    parameter.
    """


class ProjectionFailure(TruncEstimError, RuntimeError):
    pass


class EmptyDomain(TruncEstimError, ValueError):
    pass


class Unsupported(TruncEstimError, ValueError):
    pass


class FeatureCapExceeded(TruncEstimError, ValueError):
    pass


class DataError(TruncEstimError, ValueError):
    """Input data violates a precondition (too few rows, bad support, ...)."""
