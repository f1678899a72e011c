"""Exception hierarchy shared by every mvsc module."""


class MVSCError(Exception):
    """Base class for all errors raised by mvsc."""


class ShapeError(MVSCError, ValueError):
    """Tensor or image dimensions are incompatible with an operation."""


class ContractError(MVSCError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(MVSCError, ValueError):
    """A binary file has the wrong magic or layout."""


class CorruptionError(FormatError):
    """A binary file header disagrees with its payload."""


class PairingError(MVSCError, ValueError):
    """Slices and text embeddings do not line up."""


class BoundsError(MVSCError, IndexError):
    """A slice index lies outside the volume."""


class UndefinedMetricError(MVSCError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""


class ConfigError(MVSCError, ValueError):
    """A configuration key is unknown or a value cannot be parsed."""


class ValidationError(ConfigError):
    """A configuration value violates an invariant."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
