"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Invalid configuration or network spec.

    Carries every violated constraint, not just the first, so callers can
    report all problems in one pass.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ConfigError(ValidationError):
    """Invalid experiment config file or override."""


class DatasetFormatError(ValueError):
    """Malformed event-dataset container; ``offset`` is the failing byte."""

    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class StateError(RuntimeError):
    """Operation requires state that is missing (e.g. no forward cache)."""


class TrainingDiverged(RuntimeError):
    """Training produced non-finite numerics; ``runlog`` holds the partial log."""

    def __init__(self, message: str, runlog=None):
        self.runlog = runlog
        super().__init__(message)
