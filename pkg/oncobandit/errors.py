"""Exceptions raised by the oncobandit harness."""

from __future__ import annotations

from pathlib import Path


class OncoBanditError(Exception):
    """Base class for every error raised by this package."""


class CohortParseError(OncoBanditError):
    """A cohort CSV could not be parsed.

    Always carries the file, the 1-based line and the column that failed.
    """

    def __init__(self, path: Path | str, line: int, column: int, message: str) -> None:
        """Initialize the error with its location."""
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{self.path}:{line}:{column}: {message}")


class CohortValidationError(OncoBanditError):
    """Cohort tables parsed but do not form a valid dataset."""


class RuleParseError(OncoBanditError):
    """A rule file does not follow the rule grammar."""

    def __init__(self, line: int, message: str) -> None:
        """Initialize the error with its line number."""
        self.line = line
        super().__init__(f"line {line}: {message}")


class RuleBindingError(OncoBanditError):
    """A rule names a drug the dataset does not contain."""


class ConfigError(OncoBanditError):
    """Run, grid or agent configuration is invalid."""


class PosteriorError(OncoBanditError):
    """A conjugate posterior is numerically invalid."""


class ReportError(OncoBanditError):
    """Reports could not be written."""
