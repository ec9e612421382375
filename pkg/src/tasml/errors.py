"""Exception types shared across the package."""


class TasmlError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(TasmlError):
    """Operands have incompatible shapes."""


class NotPositiveDefinite(TasmlError):
    """Factorization failed even at the maximum allowed diagonal shift."""


class NonFiniteValue(TasmlError):
    """A computation produced or received NaN or Inf."""


class EmptyDataset(TasmlError):
    """An operation that needs at least one example received none."""


class ConfigInvalid(TasmlError):
    """An experiment configuration failed validation.

    The message always names the offending field.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class FileMalformed(TasmlError):
    """An embedding file failed to parse; the message carries position info."""


class InsufficientClasses(TasmlError):
    """An embedding file holds fewer classes than the episode needs."""


class InsufficientExamplesPerClass(TasmlError):
    """Some class holds fewer examples than shots + queries require."""
