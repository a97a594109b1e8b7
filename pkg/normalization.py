"""
File name: normalization.py

Description: This module provides functions for normalizing image intensities
before feature extraction, training and display.
"""

import numpy as np


def to_unit_range(values: np.ndarray) -> np.ndarray:
    """
    Min-max normalize an array to [0, 1].

    A constant array maps to all zeros instead of dividing by zero.

    Args:
        values (np.ndarray): Input intensities.

    Returns:
        np.ndarray: float64 array with values in [0, 1].
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    lo = values.min()
    span = values.max() - lo
    if span <= 0.0:
        return np.zeros_like(values)
    return (values - lo) / span


def scale_to_peak(values: np.ndarray) -> np.ndarray:
    """Divide by the maximum so the peak is 1; all-zero input stays zero."""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max() if values.size else 0.0
    if peak <= 0.0:
        return np.zeros_like(values)
    return values / peak


def standardize(values: np.ndarray) -> np.ndarray | None:
    """
    Zero-mean, unit-variance copy of `values`.

    Returns None when the input has no variation at all, which callers treat
    as "no structure in this image".
    """
    values = np.asarray(values, dtype=np.float64)
    std = values.std()
    if not np.isfinite(std) or std <= 0.0:
        return None
    return (values - values.mean()) / std


def clamp01(values: np.ndarray) -> np.ndarray:
    return np.clip(values, 0.0, 1.0)


def to_uint8(values: np.ndarray, top: int = 255) -> np.ndarray:
    """Map [0, 1] intensities onto integer grey levels 0..top."""
    return np.rint(clamp01(values) * top).astype(np.uint8)
