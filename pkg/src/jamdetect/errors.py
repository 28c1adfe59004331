"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``TrainingError`` -> 3.
"""

from __future__ import annotations


class JamDetectError(Exception):
    """Base class for all package errors."""


class DataError(JamDetectError):
    """Input data is malformed or violates a documented invariant."""


class ValidationError(DataError):
    """A record field is outside its allowed range.

    Attributes:
        field: Name of the offending field.
        row: Zero-based row index when the error came from a file, else None.
    """

    def __init__(self, field: str, message: str, row: int | None = None):
        self.field = field
        self.row = row
        where = f"row {row}: " if row is not None else ""
        super().__init__(f"{where}{field}: {message}")


class ModelError(JamDetectError):
    """A model is used before training, or with mismatched dimensions."""


class TrainingError(JamDetectError):
    """Training diverged or could not proceed."""


class NetworkError(DataError):
    """Bayesian network definition is invalid (cycle, incomplete CPT)."""


class ZeroProbabilityError(JamDetectError):
    """Conditioning on evidence that has probability zero."""
