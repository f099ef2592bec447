"""Parameter estimation for exponential families under unknown truncation.

The usual entry points are :func:`estimate_unknown_truncation` for samples
truncated to an unknown box, halfspace or low-degree polynomial threshold
set, :func:`psgd` when the set is known, and
:func:`truncated_linear_regression` for jointly truncated ``(x, y)`` pairs.
"""

__version__ = "0.1.0"

from .errors import (DataError, DegenerateMoments, DimensionError, EmptyDomain,
                     FeatureCapExceeded, InvalidParameters, ProjectionFailure,
                     RejectionBudgetExceeded, TruncEstimError, Unsupported)
from .expfam import FamilyKind, NaturalParams
from .pipeline import (EstimationReport, PipelineConfig, RegressionReport,
                       estimate_unknown_truncation, truncated_linear_regression)
from .pmle import PSGDConfig, PSGDTrace, init_theta0, psgd
from .truncation import (AxisBox, ExternalOracle, Full, Halfspace, PolyThreshold,
                         mass_estimate, sample_truncated)

__all__ = [
    "AxisBox", "DataError", "DegenerateMoments", "DimensionError", "EmptyDomain",
    "EstimationReport", "ExternalOracle", "FamilyKind", "FeatureCapExceeded", "Full",
    "Halfspace", "InvalidParameters", "NaturalParams", "PSGDConfig", "PSGDTrace",
    "PipelineConfig", "PolyThreshold", "ProjectionFailure", "RegressionReport",
    "RejectionBudgetExceeded", "TruncEstimError", "Unsupported", "estimate_unknown_truncation",
    "init_theta0", "mass_estimate", "psgd", "sample_truncated", "truncated_linear_regression",
]
