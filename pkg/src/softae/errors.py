"""Exception types shared across the package."""


class SoftAEError(Exception):
    """Base class for all package errors."""


class ShapeError(SoftAEError, ValueError):
    """Array dimensions do not match what an operation expects."""


class DomainError(SoftAEError, ValueError):
    """Input outside an operation's domain (empty batch, non-finite state, ...)."""


class NumericError(SoftAEError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConfigError(SoftAEError, ValueError):
    pass


class UsageError(SoftAEError, TypeError):
    """Arguments are individually valid but do not fit together."""


class OptimizerError(SoftAEError, RuntimeError):
    pass


class SchemaVersionError(SoftAEError, ValueError):
    pass


class ParseError(SoftAEError, ValueError):
    """Malformed file. ``line`` and ``offset`` locate the problem (1-based line)."""

    def __init__(self, message, line=None, offset=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", offset {offset})" if offset is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.offset = offset


class ExperimentError(SoftAEError, RuntimeError):
    """Raised by the episode loop; carries the partial record collected so far."""

    def __init__(self, message, episode, phase, record):
        super().__init__(f"episode {episode}, phase {phase!r}: {message}")
        self.episode = episode
        self.phase = phase
        self.record = record
