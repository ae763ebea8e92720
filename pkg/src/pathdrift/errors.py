"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PathdriftError(Exception):
    """Base class for all package-specific errors."""


class CorpusFormatError(PathdriftError):
    """A trajectory record is malformed. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateRunError(CorpusFormatError):
    """Two records share the same (model, task, run_index) key."""


class FamilyMapError(PathdriftError):
    """A model id has no family assignment."""


class InsufficientSupportError(PathdriftError):
    """Too few successful runs remain after scope exclusions."""

    def __init__(self, task: str, available: int, required: int):
        self.task = task
        self.available = available
        self.required = required
        super().__init__(
            f"task {task!r}: {available} successful run(s) after exclusions, "
            f"need at least {required}"
        )


class EmptyComparisonError(PathdriftError):
    """Jaccard similarity of two empty sets is undefined."""


class DegenerateVarianceError(PathdriftError):
    """A statistic requires nonzero variance in its inputs."""


class SeparationError(PathdriftError):
    """Logistic fit aborted: the outcome is perfectly separated."""


class NotComputableError(PathdriftError):
    """An analysis has no answer on this corpus (reason in the message)."""


class SessionError(PathdriftError):
    """Monitor session used out of order (observe after close, early decide)."""
