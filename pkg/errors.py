"""
File name: errors.py

Description: Exception types raised by the surface estimation pipeline.
Each error also derives from the closest builtin so callers can catch
either the domain type or the plain ValueError/IndexError/RuntimeError.
"""


class SpineSurfError(Exception):
    """Base class for validated-input domain errors (CLI exit code 1)."""


class InvalidGeometryError(SpineSurfError, ValueError):
    pass


class InvalidKinematicsError(SpineSurfError, ValueError):
    pass


class OutOfBoundsError(SpineSurfError, ValueError):
    pass


class PixelIndexError(SpineSurfError, IndexError):
    pass


class DimensionError(SpineSurfError, ValueError):
    pass


class ShapeError(SpineSurfError, ValueError):
    pass


class DegenerateInputError(SpineSurfError, ValueError):
    pass


class SplitError(SpineSurfError, ValueError):
    pass


class AlignmentError(SpineSurfError, ValueError):
    pass


class ConfigError(SpineSurfError, ValueError):
    pass


class FileFormatError(SpineSurfError, ValueError):
    pass


class ConvergenceError(SpineSurfError, RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class TrainingError(SpineSurfError, RuntimeError):
    """Training diverged; `epoch` is the zero-based epoch that produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch={epoch})")
        self.epoch = epoch
