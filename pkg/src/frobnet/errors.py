"""Exception hierarchy; each CLI exit code maps to exactly one family."""


class FrobnetError(Exception):
    """Base class for all library errors."""


class RejectedInput(FrobnetError, ValueError):
    """Arguments violate an operation's preconditions."""


class ParseError(FrobnetError, ValueError):
    """A serialized document could not be decoded."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(FrobnetError, ValueError):
    """A run configuration is malformed or incomplete."""


class BudgetInfeasible(FrobnetError):
    """No admissible construction fits under the requested norm budget."""

    def __init__(self, message: str, minimal_K: float):
        self.minimal_K = minimal_K
        super().__init__(f"{message}; minimal feasible K = {minimal_K:.6g}")


class SizeLimitExceeded(RejectedInput):
    """Predicted network size is above the configured weight cap."""

    def __init__(self, message: str, predicted_weights: int, cap: int):
        self.predicted_weights = predicted_weights
        self.cap = cap
        super().__init__(f"{message}: predicted {predicted_weights} weights > cap {cap}")


class OracleInconsistency(FrobnetError):
    """An oracle's values contradict its declared metadata."""


class CertificateViolation(FrobnetError):
    """A certified quantity failed its recomputation."""


class TrainingFailure(FrobnetError):
    """Optimization diverged."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)
