"""
Exception hierarchy shared by the toolkit.

Every error raised on purpose by library code derives from ReIDError so the
command layer can turn it into a clean diagnostic. The builtin bases keep
plain ``except ValueError`` / ``except OSError`` callers working.
"""


class ReIDError(Exception):
    """Base class for toolkit errors."""


class ValidationError(ReIDError, ValueError):
    """An input violates a documented precondition."""


class ConfigurationError(ReIDError, ValueError):
    """A run or protocol configuration cannot be satisfied."""


class NumericError(ReIDError, ArithmeticError):
    """A tensor or loss value is not finite."""


class DatasetIOError(ReIDError, OSError):
    """A dataset root or file cannot be read or written."""


class CheckpointError(ReIDError, OSError):
    """A checkpoint is missing, unreadable or incompatible."""
