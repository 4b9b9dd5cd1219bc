"""Exception hierarchy shared across the package."""


class PACError(Exception):
    """Base class for all package errors."""


class InvalidBudgetError(PACError, ValueError):
    pass


class InvalidEmbeddingError(PACError, ValueError):
    pass


class ShapeError(PACError, ValueError):
    pass


class UndefinedRiskError(PACError, ValueError):
    pass


class IncompleteRecordError(PACError, ValueError):
    pass


class DegenerateDivisionError(PACError, ZeroDivisionError):
    pass


class EmptySequenceError(PACError, ValueError):
    pass


class OutOfRangeError(PACError, ValueError):
    pass


class InsufficientSamplesError(PACError, ValueError):
    pass


class InvalidRangeError(PACError, ValueError):
    pass


class EmptyGridError(PACError, ValueError):
    pass


class SamplingError(PACError):
    """The loss oracle failed while drawing importance samples.

    ``position`` is the 0-based sample index ``j`` that failed and ``index``
    the calibration record index that was being queried, so a caller can
    resume after fixing the endpoint.
    """

    def __init__(self, message, *, position, index):
        super().__init__(message)
        self.position = position
        self.index = index


class PartialResultError(PACError):
    """Some items could not be labeled; ``missing`` lists their ids."""

    def __init__(self, message, *, missing, partial=None):
        super().__init__(message)
        self.missing = list(missing)
        self.partial = partial


class OracleError(PACError):
    """Numerical integration for a ground-truth risk did not converge."""


class ConfigError(PACError, ValueError):
    pass


class TransportError(PACError):
    """An endpoint request failed after all retries."""


class CapabilityError(PACError):
    """The endpoint cannot provide what was asked (e.g. token logprobs)."""


class IngestionError(PACError, ValueError):
    def __init__(self, message, *, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class PolicyMismatchError(PACError, ValueError):
    pass
