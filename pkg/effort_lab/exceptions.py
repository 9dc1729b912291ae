"""Exception hierarchy; each family carries the category the CLI maps to an exit code."""
from __future__ import annotations

from typing import Any, Dict, Optional

from effort_lab.utils.error_handler import ErrorCategory, ErrorSeverity


class EffortLabError(Exception):
    """Root of every error raised by effort_lab."""

    category = ErrorCategory.SYSTEM_ERROR
    severity = ErrorSeverity.HIGH

    def __init__(self, message: str, *, context: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.context: Dict[str, Any] = dict(context or {})


class ConfigError(EffortLabError):
    category = ErrorCategory.VALIDATION_ERROR
    severity = ErrorSeverity.MEDIUM


# --- data -------------------------------------------------------------------

class DataError(EffortLabError):
    category = ErrorCategory.DATA_ERROR
    severity = ErrorSeverity.MEDIUM


class SchemaError(DataError):
    pass


class DatasetParseError(DataError):
    pass


class MissingColumnError(DatasetParseError):
    pass


class UnexpectedColumnError(DatasetParseError):
    pass


class NonNumericCellError(DatasetParseError):
    pass


class MissingValueError(DatasetParseError):
    pass


class EmptyDatasetError(DatasetParseError):
    pass


class RowCountError(DataError):
    pass


class SplitError(DataError):
    pass


class FixtureError(DataError):
    pass


class NonContiguousMonthsError(FixtureError):
    pass


# --- estimation ---------------------------------------------------------------

class CocomoError(DataError):
    pass


class RatingDomainError(CocomoError):
    pass


class CalibrationError(CocomoError):
    category = ErrorCategory.COMPUTATION_ERROR


class EstimatorError(EffortLabError):
    category = ErrorCategory.COMPUTATION_ERROR
    severity = ErrorSeverity.MEDIUM


class DimensionMismatchError(EstimatorError):
    category = ErrorCategory.VALIDATION_ERROR


class CollinearPredictorsError(EstimatorError):
    pass


class LinearProgramError(EffortLabError):
    category = ErrorCategory.COMPUTATION_ERROR
    severity = ErrorSeverity.MEDIUM


class InfeasibleError(LinearProgramError):
    pass


class UnboundedError(LinearProgramError):
    pass


class MetricError(EffortLabError):
    category = ErrorCategory.COMPUTATION_ERROR
    severity = ErrorSeverity.MEDIUM


class TuningError(EffortLabError):
    category = ErrorCategory.VALIDATION_ERROR
    severity = ErrorSeverity.MEDIUM


class ExperimentError(EffortLabError):
    category = ErrorCategory.VALIDATION_ERROR


class InadmissibleTreatmentError(ExperimentError):
    pass


class IsolationError(ExperimentError):
    category = ErrorCategory.ISOLATION_ERROR
    severity = ErrorSeverity.CRITICAL


# --- network ------------------------------------------------------------------

class NetworkError(EffortLabError):
    category = ErrorCategory.NETWORK_ERROR


class RateLimitError(NetworkError):
    pass


class RepoNotFoundError(NetworkError):
    pass


class AuthenticationError(NetworkError):
    category = ErrorCategory.AUTHENTICATION_ERROR
    severity = ErrorSeverity.CRITICAL


class NetworkDisabledError(NetworkError):
    severity = ErrorSeverity.MEDIUM
