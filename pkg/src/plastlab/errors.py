"""Exception types shared across the package."""


class PlastlabError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(PlastlabError, ValueError):
    """Malformed or non-finite input to a numeric operation."""


class DomainError(PlastlabError, ValueError):
    """Argument outside the supported domain of a special function."""


class SpecError(PlastlabError, ValueError):
    """Inconsistent network or environment specification."""


class UndefinedRankError(PlastlabError, ValueError):
    """Rank metrics requested for an all-zero feature matrix."""


class NumericError(PlastlabError, ArithmeticError):
    """Non-finite value encountered where a finite one is required."""


class MitigationError(PlastlabError, ValueError):
    """A mitigation method cannot be applied to the given network."""


class CheckpointError(PlastlabError, RuntimeError):
    """Unreadable, corrupted, or version-incompatible checkpoint."""


class ConfigError(PlastlabError, ValueError):
    """Invalid experiment configuration (unknown key or violated rule)."""


class DivergenceError(PlastlabError, RuntimeError):
    """Training produced a non-finite loss; carries the failing step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
