"""
Service layer utility functions.

This module centralizes the precondition checks shared by the geometry, rendering and
diffusion services, so every service reports bad input through the same exceptions.
"""

from pathlib import Path
from typing import Optional, Sequence, TypeVar

import numpy as np

from app.core.exceptions import ArtifactNotFoundError, ParameterError

T = TypeVar("T")


def ensure_exists(path: Path | str, artifact_name: str) -> Path:
    """
    Ensure an input artifact exists on disk.

    Args:
        path: Location of the artifact
        artifact_name: Human-readable artifact kind (e.g., "Checkpoint", "Front map")

    Returns:
        The path as a Path object

    Raises:
        ArtifactNotFoundError: If nothing exists at the path
    """
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(artifact_name, str(path))
    return path


def ensure_positive(value: float, field_name: str) -> float:
    """
    Validate that a numeric value is strictly positive.

    Raises:
        ParameterError: If value is not greater than 0
    """
    if not value > 0:
        raise ParameterError(
            f"{field_name} must be greater than 0", field_name, str(value)
        )
    return value


def ensure_in_range(
    value: float,
    field_name: str,
    low: float,
    high: float,
    *,
    include_low: bool = True,
    include_high: bool = True,
) -> float:
    """
    Validate that a value lies inside an interval.

    Raises:
        ParameterError: If the value falls outside the interval
    """
    above = value >= low if include_low else value > low
    below = value <= high if include_high else value < high
    if not (above and below):
        left = "[" if include_low else "("
        right = "]" if include_high else ")"
        raise ParameterError(
            f"{field_name} must lie in {left}{low}, {high}{right}",
            field_name,
            str(value),
        )
    return value


def ensure_same_shape(
    first: np.ndarray,
    second: np.ndarray,
    field_name: str,
    expected: Optional[Sequence[int]] = None,
) -> None:
    """
    Validate that two arrays share a shape (and optionally a required shape).

    Raises:
        ParameterError: If the shapes differ
    """
    if first.shape != second.shape:
        raise ParameterError(
            f"{field_name}: shape mismatch {first.shape} vs {second.shape}",
            field_name,
            f"{first.shape} vs {second.shape}",
        )
    if expected is not None and tuple(first.shape) != tuple(expected):
        raise ParameterError(
            f"{field_name}: expected shape {tuple(expected)}, got {first.shape}",
            field_name,
            str(first.shape),
        )


def ensure_finite(array: np.ndarray, field_name: str) -> np.ndarray:
    """
    Validate that an array holds only finite values.

    Raises:
        ParameterError: If any element is NaN or infinite
    """
    if not np.all(np.isfinite(array)):
        raise ParameterError(f"{field_name} contains non-finite values", field_name)
    return array
