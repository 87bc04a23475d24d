"""
Domain error hierarchy.

Every failure the pipeline can report derives from `XridError`; the command line
maps it to exit code 1. Argument-validation failures also derive from
`ValueError` so plain callers can catch them without importing this module.
"""

from typing import Optional, Sequence


class XridError(Exception):
    """Root of all domain errors."""


# --- motion_io ---
class MalformedRow(XridError, ValueError):
    def __init__(self, row: Optional[int], reason: str):
        self.row = row
        super().__init__(reason if row is None else f"Malformed row {row}: {reason}")


class SchemaMismatch(MalformedRow):
    """The header itself is wrong; `row` is None."""

    def __init__(self, found: Sequence[str], expected: Sequence[str]):
        self.found = list(found)
        self.expected = list(expected)
        missing = [c for c in self.expected if c not in self.found]
        super().__init__(None, f"Header does not match the recording schema; missing {missing}, expected {self.expected}")


class NonMonotonicTime(XridError, ValueError):
    pass


class EmptyRecording(XridError, ValueError):
    pass


class IoFailure(XridError, OSError):
    pass


class ManifestError(XridError, ValueError):
    pass


# --- kinematics ---
class DegenerateQuaternion(XridError, ValueError):
    pass


class TooShort(XridError, ValueError):
    pass


# --- tensor_autodiff / model ---
class ShapeMismatch(XridError, ValueError):
    pass


class NonFiniteValue(XridError, ArithmeticError):
    pass


class NonScalarLoss(XridError, ValueError):
    pass


class WindowTooLong(XridError, ValueError):
    pass


class CheckpointMismatch(XridError, ValueError):
    pass


# --- training ---
class IndexOutOfRange(XridError, IndexError):
    pass


class DegenerateBatch(XridError, ValueError):
    pass


class EmptyTrainingSet(XridError, ValueError):
    pass


# --- identification ---
class EmptyStore(XridError, ValueError):
    pass


class InsufficientSpan(XridError, ValueError):
    pass


# --- evaluation ---
class RosterTooSmall(XridError, ValueError):
    pass


class RecordingTooShort(XridError, ValueError):
    pass


class NoWindows(XridError, ValueError):
    pass


class MissingApp(XridError, ValueError):
    pass


# --- dataset_stats ---
class IncompleteMatrix(XridError, ValueError):
    pass


# --- cli ---
class ConfigError(XridError, ValueError):
    pass


class StageFailed(XridError):
    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.cause = cause
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"Stage '{stage}' failed{detail}")
