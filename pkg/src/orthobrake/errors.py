"""Exception taxonomy shared across the package.

Every error that can cross a module boundary derives from OrthobrakeError so
the service layer can map each class to exactly one wire-level error code.
"""
from __future__ import annotations


class OrthobrakeError(Exception):
    """Base class for all package-defined errors."""


class ValidationError(OrthobrakeError):
    """Input values violate a documented precondition or type invariant."""


class UnitError(OrthobrakeError):
    """Operation requires a linear CRS but the raster is in angular units."""


class TransportError(OrthobrakeError):
    """Network-level failure talking to an imagery endpoint (retryable)."""


class ServiceError(OrthobrakeError):
    """Imagery endpoint answered with a non-success status."""

    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class DecodeError(OrthobrakeError):
    """Payload bytes could not be decoded as the promised format."""


class ParseError(OrthobrakeError):
    """A document or stream failed to parse."""


class SchemaVersionError(ParseError):
    """Document carries a schema version this build does not understand."""


class GeometryError(OrthobrakeError):
    """Degenerate geometry: zero-length segment, undefined side, etc."""


class EstimationError(OrthobrakeError):
    """Direct fit failed: too few pairs or a degenerate configuration."""


class EstimationFailure(OrthobrakeError):
    """Robust search exhausted its budget without an acceptable model."""


class HorizonError(OrthobrakeError):
    """Projective division by w with |w| below threshold (point at horizon)."""


class TooShortError(OrthobrakeError):
    """Trajectory has too few samples or too little time span to analyze."""


class TrajectoryRejected(OrthobrakeError):
    """Too many points of a trajectory were dropped to trust the remainder."""


class ConfigError(OrthobrakeError):
    """Configuration is missing or inconsistent for the requested operation."""


class StoreError(OrthobrakeError):
    """Base class for persistent store failures."""


class StoreLockError(StoreError):
    """Another writer holds the store lock."""


class StoreConflictError(StoreError):
    """One batch carries the same key twice with differing payloads."""


class StoreSchemaError(StoreError):
    """Row does not conform to the table schema."""
