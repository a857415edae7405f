class AuditError(ValueError):
    """Base class for every error raised by the audit engine."""


class InvalidConfigError(AuditError):
    pass


class SchemaError(AuditError):
    pass


class EmptyCohortError(AuditError):
    pass


class StratificationError(AuditError):
    pass


class FitError(AuditError):
    pass


class ShapeError(AuditError):
    pass


class RangeError(AuditError):
    pass


class AlignmentError(AuditError):
    pass


class SpecError(AuditError):
    pass


class ConfigError(AuditError):
    pass


class UndefinedAucError(AuditError):
    pass


class UndefinedCorrelationError(AuditError):
    pass


class NoEvaluableGroupsError(AuditError):
    pass


class IncompleteScorecardError(AuditError):
    pass


class PlanError(AuditError):
    pass


class TooSmallError(AuditError):
    pass


# Metric kernels raise these when a resample makes the statistic undefined;
# the bootstrap redraws such replicates.
UNDEFINED_METRIC_ERRORS = (
    UndefinedAucError,
    UndefinedCorrelationError,
    NoEvaluableGroupsError,
)
