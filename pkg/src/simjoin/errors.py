"""Errors raised across the package; the CLI maps these onto exit codes."""

from __future__ import annotations


class SimjoinError(Exception):
    """Base class for every error this package raises deliberately."""


class ParseError(SimjoinError):
    """Malformed input data."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class SelfPairError(SimjoinError):
    """A pair operation received the same id twice."""


class UndefinedSimilarityError(SimjoinError):
    """The similarity denominator vanished (an empty operand)."""


class MemoryBudgetExceeded(SimjoinError):
    """Something had to fit within a worker's memory budget and did not."""

    def __init__(self, message: str, subject: bytes | str | None = None):
        super().__init__(message)
        self.subject = subject


class PreconditionRefused(SimjoinError):
    """A pipeline refused to run because one of its preconditions fails."""


class InternalInconsistencyError(SimjoinError):
    """Invariant violation that indicates a bug, not bad input."""


class StageExecutionError(SimjoinError):
    """A map, combine, or reduce function failed; carries the failing key."""

    def __init__(self, stage: str, phase: str, detail: str):
        super().__init__(f"stage {stage!r}: {phase} failed on {detail}")
        self.stage = stage
        self.phase = phase
        self.detail = detail
