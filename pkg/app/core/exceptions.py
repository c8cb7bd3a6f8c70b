"""
Domain exceptions for the carving pipeline.

These exceptions represent domain errors raised by the geometry, rendering, diffusion
and pipeline services. They are converted to HTTP responses by the exception handler
middleware and to exit codes by the command-line entry point, which keeps numerical
code free of transport concerns.
"""

from typing import Optional


class DomainException(Exception):
    """Base exception for all domain-level errors."""

    def __init__(self, message: str, details: Optional[dict] = None):
        self.message = message
        self.details = details or {}
        super().__init__(message)


class ParameterError(DomainException):
    """Raised when a numeric parameter, shape or range is invalid."""

    def __init__(
        self, message: str, field: Optional[str] = None, value: Optional[str] = None
    ):
        self.field = field
        self.value = value
        super().__init__(message, {"field": field, "value": value})


class MeshTopologyError(DomainException):
    """Raised when a mesh violates a connectivity precondition."""

    def __init__(self, message: str, operation: Optional[str] = None):
        self.operation = operation
        super().__init__(message, {"operation": operation})


class RasterError(DomainException):
    """Raised for degenerate cameras and mismatched render buffers."""

    def __init__(self, message: str, context: Optional[dict] = None):
        super().__init__(message, context)


class DivergenceError(DomainException):
    """Raised when an optimization loop produces a non-finite loss."""

    def __init__(self, loop_name: str, step_name: str, step_index: int):
        self.loop_name = loop_name
        self.step_name = step_name
        self.step_index = step_index
        super().__init__(
            f"{loop_name} diverged (non-finite loss) at {step_name} {step_index}",
            {"loop": loop_name, step_name: step_index},
        )


class CheckpointError(DomainException):
    """Base class for checkpoint read failures."""


class CheckpointCorruptError(CheckpointError):
    """Raised when a checkpoint file is truncated or has a bad header."""

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"Corrupt checkpoint {path}: {reason}", {"path": path})


class CheckpointMismatchError(CheckpointError):
    """Raised when a checkpoint does not fit the requested architecture."""

    def __init__(self, parameter: str, expected: tuple, found: tuple):
        self.parameter = parameter
        self.expected = expected
        self.found = found
        super().__init__(
            f"Checkpoint parameter {parameter} has shape {found}, "
            f"architecture expects {expected}",
            {"parameter": parameter, "expected": list(expected), "found": list(found)},
        )


class ArtifactNotFoundError(DomainException):
    """Raised when a required input artifact does not exist."""

    def __init__(self, artifact_name: str, path: str):
        self.artifact_name = artifact_name
        self.path = path
        super().__init__(
            f"{artifact_name} not found at {path}",
            {"artifact_name": artifact_name, "path": path},
        )


class PipelineStageError(DomainException):
    """Raised when one stage of a multi-stage run fails."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(
            f"Stage '{stage}' failed: {cause}",
            {"stage": stage, "cause": type(cause).__name__},
        )


class ArtifactCorruptError(DomainException):
    """Raised when an artifact file is truncated or carries a bad header."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Corrupt artifact {path}: {reason}", {"path": path})
