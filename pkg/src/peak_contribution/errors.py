"""
Error types for the peak contribution pipeline.

Each error carries the process exit code the CLI reports for it:
2 for validation problems, 3 for a missing upstream artifact, 4 for numeric failures.
"""

from typing import Optional


class PeakContributionError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(PeakContributionError, ValueError):
    """Input or configuration does not satisfy a documented contract."""

    exit_code = 2


class ParseError(ValidationError):
    """A CSV record could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetEmptyError(ValidationError):
    pass


class DuplicateKeyError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class InvariantViolationError(ValidationError):
    pass


class ClassAbsentError(ValidationError):
    pass


class ShapeMismatchError(ValidationError):
    pass


class UndefinedMetricError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ManifestMismatchError(ValidationError):
    pass


class MissingArtifactError(PeakContributionError, FileNotFoundError):
    """An upstream artifact is absent; the message names the subcommand producing it."""

    exit_code = 3

    def __init__(self, path, producer: str):
        self.path = path
        self.producer = producer
        super().__init__(f"missing artifact {path}: run `{producer}` first")


class NumericalError(PeakContributionError, ArithmeticError):
    """A numerical routine failed to converge or met a singular system."""

    exit_code = 4
