"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
ProviderError -> 3.
"""

from __future__ import annotations


class NotecheckError(Exception):
    """Base class for all toolkit errors."""


class UsageError(NotecheckError):
    """Bad command line or configuration."""


class DataError(NotecheckError):
    """Malformed or inconsistent input data."""


class StageInputError(DataError):
    """A pipeline stage is missing an upstream output."""

    def __init__(self, message: str, producing_stage: str | None = None):
        super().__init__(message)
        self.producing_stage = producing_stage


class ProviderError(NotecheckError):
    """Backend call failed, or its payload was unusable."""


class OutputParseError(ProviderError):
    """A model response could not be parsed into the expected structure."""


class UntestableQuestionError(NotecheckError):
    """No reference note passes the question, so it cannot be unit-tested."""
