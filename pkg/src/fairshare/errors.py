"""Exception types raised across the package.

Every error carries a stable ``code`` used by the CLI when emitting
machine-readable failures.
"""


class FairshareError(ValueError):
    code = "FairshareError"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        out.update(self.details)
        return out


class MalformedRow(FairshareError):
    code = "MalformedRow"


class InvalidTreatmentBit(FairshareError):
    code = "InvalidTreatmentBit"


class EmptyTable(FairshareError):
    code = "EmptyTable"


class TooManyExperiments(FairshareError):
    code = "TooManyExperiments"


class IndexOutOfRange(FairshareError):
    code = "IndexOutOfRange"


class DimensionMismatch(FairshareError):
    code = "DimensionMismatch"


class SingleClassOnly(FairshareError):
    code = "SingleClassOnly"


class NoCovariates(FairshareError):
    code = "NoCovariates"


class UnobservedCoalition(FairshareError):
    code = "UnobservedCoalition"


class RankDeficient(FairshareError):
    code = "RankDeficient"


class MethodMismatch(FairshareError):
    code = "MethodMismatch"


class BaselineNearZero(FairshareError):
    code = "BaselineNearZero"


class MissingSubsetValue(FairshareError):
    code = "MissingSubsetValue"


class OracleUndefined(FairshareError):
    code = "OracleUndefined"


class PipelineFailure(FairshareError):
    code = "PipelineFailure"


class UsageError(FairshareError):
    code = "UsageError"


class ConvergenceWarning(UserWarning):
    """Optimizer stopped at max_iterations before reaching the gradient tolerance."""
