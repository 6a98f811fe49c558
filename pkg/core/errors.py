# core/errors.py


class DuoflowError(Exception):
    """Base class for every error raised by the library."""


class ShapeMismatchError(DuoflowError, ValueError):
    pass


class NonFiniteInputError(DuoflowError, ValueError):
    pass


class BoundViolationError(DuoflowError, ValueError):
    """A layer decomposition breaks the additive model or the foreground bound."""


class InitializationError(DuoflowError):
    pass


class FormatError(DuoflowError):
    """Unreadable, truncated or unsupported file."""


class ConfigError(DuoflowError, ValueError):
    pass
