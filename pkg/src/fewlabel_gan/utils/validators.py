"""Error types and input validation utilities."""

import math
from fractions import Fraction
from typing import Sequence

import numpy as np
import torch


class FewLabelError(Exception):
    """Base exception for the package."""

    pass


class ValidationError(FewLabelError, ValueError):
    """Invalid argument (bad range, shape or distribution)."""

    pass


class StateError(FewLabelError, RuntimeError):
    """Operation not possible in the current state (e.g. no labeled data)."""

    pass


class ConfigurationError(FewLabelError):
    """Invalid configuration or missing artifact."""

    pass


class DivergenceError(FewLabelError):
    """A training loss became non-finite."""

    pass


SOFT_LABEL_TOLERANCE = 1e-5


def validate_k_percent(k_percent: float) -> Fraction:
    """
    Validate a label percentage.

    Args:
        k_percent: Percentage of labels to keep, in (0, 100].

    Returns:
        The percentage as an exact fraction.

    Raises:
        ValidationError: If k_percent is outside (0, 100].
    """
    if not math.isfinite(float(k_percent)) or not 0 < float(k_percent) <= 100:
        raise ValidationError(f"k_percent must be in (0, 100], got {k_percent}")
    # str() keeps decimal literals exact (0.29 -> 29/100, not the binary float)
    return Fraction(str(k_percent))


def validate_square(shape: Sequence[int], height_axis: int = 0, width_axis: int = 1) -> None:
    """
    Validate that an image shape is square.

    Raises:
        ValidationError: If height and width differ.
    """
    if shape[height_axis] != shape[width_axis]:
        raise ValidationError(
            f"Rotation needs square images, got {shape[height_axis]}x{shape[width_axis]}"
        )


def validate_soft_labels(y: torch.Tensor, tolerance: float = SOFT_LABEL_TOLERANCE) -> None:
    """
    Validate a batch of label distributions.

    Args:
        y: Tensor of shape [..., K].
        tolerance: Allowed deviation of each row sum from 1.

    Raises:
        ValidationError: If any entry is negative or a row does not sum to 1.
    """
    if torch.any(y < 0):
        raise ValidationError("Soft labels must be nonnegative")
    sums = y.sum(dim=-1)
    if torch.any((sums - 1).abs() > tolerance):
        raise ValidationError(
            f"Soft labels must sum to 1 within {tolerance}, got sums in "
            f"[{float(sums.min()):.6f}, {float(sums.max()):.6f}]"
        )


def validate_probability_rows(probs: np.ndarray, tolerance: float = SOFT_LABEL_TOLERANCE) -> None:
    """
    Validate a row-stochastic matrix of class posteriors.

    Raises:
        ValidationError: On empty input, negative entries, zero rows or rows not summing to 1.
    """
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValidationError(f"Expected a nonempty [N, K] matrix, got shape {probs.shape}")
    if np.any(probs < 0):
        raise ValidationError("Class posteriors must be nonnegative")
    sums = probs.sum(axis=1)
    if np.any(sums == 0):
        raise ValidationError("Class posterior rows must not sum to zero")
    if np.any(np.abs(sums - 1) > tolerance):
        raise ValidationError(f"Class posterior rows must sum to 1 within {tolerance}")


def validate_nonnegative(name: str, value: float) -> None:
    """
    Validate a finite, nonnegative scalar.

    Raises:
        ValidationError: If value is negative or not finite.
    """
    if not math.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be finite and nonnegative, got {value}")
