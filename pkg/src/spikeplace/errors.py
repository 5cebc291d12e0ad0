"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SpikePlaceError(Exception):
    """Base class for all package errors."""


class DataError(SpikePlaceError):
    """Input data is malformed or inconsistent (CLI exit code 2)."""


class MalformedRecordError(DataError):
    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.line = line
        self.offset = offset


class GeometryError(DataError):
    """Coordinates or tensor shapes disagree with the declared geometry."""


class TrackTooShortError(DataError):
    pass


class InsufficientPositivesError(DataError):
    """A sampled anchor has no cross-traverse neighbour within tolerance."""


class DegenerateBatchError(SpikePlaceError):
    pass


class EmptyDatabaseError(DataError):
    pass


class TapeMismatchError(SpikePlaceError):
    """Backward was called on a layer that does not own the top tape record."""


class UninitializedStatsError(SpikePlaceError):
    """Batch-norm used in inference mode before running statistics exist."""


class NonFiniteGradientError(SpikePlaceError):
    pass


class CheckpointError(DataError):
    pass


class ConfigError(SpikePlaceError):
    """Run configuration failed schema validation (CLI exit code 1)."""
