"""Exception types shared across the toolkit.

Every failure the library raises on purpose derives from DenoqError, so
callers (and the CLI exit-code mapping) can tell deliberate rejections
apart from genuine bugs.
"""


class DenoqError(Exception):
    """Base class for all errors raised deliberately by this package."""


class DimensionError(DenoqError):
    """Shapes or lengths of the inputs do not line up."""


class DomainError(DenoqError):
    """A value is outside the domain an operation accepts."""


class ConfigError(DenoqError):
    """A configuration file or option is malformed or unknown."""


class FormatError(DenoqError):
    """A binary file is corrupt, truncated, or of an unsupported version."""


class IntegrityError(DenoqError):
    """Quantized data violates its own declared invariants."""


class HeadroomError(DenoqError):
    """An integer operation could overflow its accumulator or storage."""


class NumericalError(DenoqError):
    """A numeric stage produced or detected non-finite values."""
