"""Error hierarchy shared by the library and the command line."""


class ConfpermError(Exception):
    """Base error. ``code`` is stable and ``exit_code`` is what the CLI returns."""

    code = "RUNTIME_ERROR"
    exit_code = 2

    def __init__(self, message: str, *, field: str | None = None):
        super().__init__(message)
        self.message = message
        self.field = field

    def to_record(self) -> dict[str, str]:
        record = {"type": "error", "message": self.message, "code": self.code}
        if self.field:
            record["field"] = self.field
        return record


class InputError(ConfpermError):
    code = "INVALID_INPUT"
    exit_code = 1


class ConfigError(InputError):
    code = "INVALID_CONFIG"


class SchemaError(InputError):
    code = "SCHEMA_ERROR"


class LabelError(InputError):
    code = "LABEL_ERROR"


class FormatError(InputError):
    code = "FORMAT_ERROR"


class MissingValueError(FormatError):
    code = "MISSING_VALUE"


class BinningError(InputError):
    code = "BINNING_ERROR"


class SplitError(InputError):
    code = "SPLIT_ERROR"


class ContractError(InputError):
    """A caller broke a statistical or shape contract (lengths, b, scheme)."""

    code = "CONTRACT_ERROR"


class ComputationError(ConfpermError):
    code = "COMPUTATION_ERROR"
    exit_code = 2


class LearnerError(ComputationError):
    code = "LEARNER_ERROR"


class SingularMatrixError(LearnerError):
    code = "SINGULAR_MATRIX"


class UndefinedMetricError(ComputationError):
    code = "UNDEFINED_METRIC"


class DegenerateError(ComputationError):
    """Zero spread or a degenerate denominator."""

    code = "DEGENERATE"


class EnumerationCapError(ComputationError):
    code = "ENUMERATION_CAP"


class IterationError(ComputationError):
    """A permutation iteration failed; ``index`` is an int or an (outer, inner) pair."""

    code = "ITERATION_FAILED"

    def __init__(self, message: str, *, index: int | tuple[int, ...]):
        super().__init__(message)
        self.index = index
