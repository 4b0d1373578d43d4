"""Exception hierarchy shared across the package."""


class CalicoError(Exception):
    """Base class for all package errors."""


class ValidationError(CalicoError):
    """A contract precondition was violated by the caller."""


class FormatError(CalicoError):
    """On-disk data is malformed; the message names the offending field."""


class NumericError(CalicoError):
    """A computation produced non-finite values or diverged."""


class TrainingDiverged(NumericError):
    """Training loss became non-finite.

    Carries the last good parameter snapshot so callers can checkpoint it.
    """

    def __init__(self, message: str, params=None, metrics=None):
        super().__init__(message)
        self.params = params
        self.metrics = metrics
