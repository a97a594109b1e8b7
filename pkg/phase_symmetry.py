"""
File name: phase_symmetry.py

Description: Log-Gabor filter bank and the phase symmetry measure used as
the ridge (bar) feature of bone reflections. Filtering is done in the
frequency domain on a symmetrically padded copy of the image.
"""

from dataclasses import dataclass

import numpy as np

from errors import DimensionError
from geometry import PolarImage
from normalization import standardize


@dataclass(frozen=True)
class LogGaborParams:
    """
    Filter bank settings.

    Args:
        n_scales (int): Number of wavelet scales.
        n_orientations (int): Number of filter orientations over [0, pi).
        min_wavelength_px (float): Wavelength of the smallest scale.
        scale_mult (float): Wavelength ratio between successive scales.
        sigma_onf (float): Log-frequency bandwidth ratio (0.55 is about two octaves).
        d_theta_sigma (float): Angular sigma as a fraction of the orientation spacing.
        noise_t (float): Noise threshold in units of the estimated noise amplitude.
        epsilon (float): Denominator guard, as a fraction of the peak total amplitude.
    """

    n_scales: int = 3
    n_orientations: int = 6
    min_wavelength_px: float = 6.0
    scale_mult: float = 2.1
    sigma_onf: float = 0.55
    d_theta_sigma: float = 0.8
    noise_t: float = 2.0
    epsilon: float = 0.01

    def __post_init__(self):
        if self.n_scales < 1 or self.n_orientations < 1:
            raise ValueError("n_scales and n_orientations must be >= 1")
        if self.min_wavelength_px < 2:
            raise ValueError("min_wavelength_px must be >= 2")
        if not 0.0 < self.sigma_onf < 1.0:
            raise ValueError("sigma_onf must lie in (0, 1)")
        if self.scale_mult <= 0 or self.d_theta_sigma <= 0:
            raise ValueError("scale_mult and d_theta_sigma must be positive")
        if self.noise_t < 0:
            raise ValueError("noise_t must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def max_wavelength_px(self) -> float:
        return self.min_wavelength_px * self.scale_mult ** (self.n_scales - 1)


def log_gabor_bank(rows: int, cols: int, p: LogGaborParams) -> np.ndarray:
    """
    Frequency-domain log-Gabor transfer functions on the (unshifted) DFT lattice.

    Args:
        rows (int): Lattice height.
        cols (int): Lattice width.
        p (LogGaborParams): Bank settings.

    Returns:
        np.ndarray: Array of shape (n_scales, n_orientations, rows, cols) with
        values in [0, 1] and a zero DC bin.
    """
    if rows < 4 or cols < 4:
        raise DimensionError(f"Filter lattice must be at least 4x4, got {rows}x{cols}")
    fy = np.fft.fftfreq(rows)[:, None]
    fx = np.fft.fftfreq(cols)[None, :]
    radius = np.hypot(fx, fy)
    radius[0, 0] = 1.0  # avoid log(0); DC is zeroed below
    theta = np.arctan2(-fy, fx)
    sin_theta, cos_theta = np.sin(theta), np.cos(theta)

    log_width = 2.0 * np.log(p.sigma_onf) ** 2
    theta_sigma = p.d_theta_sigma * np.pi / p.n_orientations

    bank = np.empty((p.n_scales, p.n_orientations, rows, cols))
    for s in range(p.n_scales):
        f0 = 1.0 / (p.min_wavelength_px * p.scale_mult ** s)
        radial = np.exp(-(np.log(radius / f0) ** 2) / log_width)
        radial[0, 0] = 0.0
        for o in range(p.n_orientations):
            angle = o * np.pi / p.n_orientations
            d_sin = sin_theta * np.cos(angle) - cos_theta * np.sin(angle)
            d_cos = cos_theta * np.cos(angle) + sin_theta * np.sin(angle)
            d_theta = np.abs(np.arctan2(d_sin, d_cos))
            bank[s, o] = radial * np.exp(-d_theta ** 2 / (2.0 * theta_sigma ** 2))
    return bank


def _next_pow2(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 1))))


def phase_symmetry(img: PolarImage | np.ndarray, p: LogGaborParams) -> np.ndarray:
    """
    Phase symmetry of a 2-D image.

    PS = sum_{s,o} max(|even| - |odd| - T_so, 0) / (sum_{s,o} amplitude + epsilon * peak).
    The input is standardized first, so the result does not depend on contrast.

    Args:
        img (PolarImage | np.ndarray): Polar frame (rows = samples).
        p (LogGaborParams): Filter bank settings.

    Returns:
        np.ndarray: Feature map in [0, 1] with the shape of the input.
    """
    data = img.data if isinstance(img, PolarImage) else np.asarray(img, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionError(f"phase_symmetry expects a 2-D image, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise DimensionError("phase_symmetry input contains non-finite values")
    rows, cols = data.shape
    standardized = standardize(data)
    if standardized is None:
        return np.zeros((rows, cols))

    margin = int(np.ceil(p.max_wavelength_px))
    padded_rows = _next_pow2(rows + 2 * margin)
    padded_cols = _next_pow2(cols + 2 * margin)
    top = (padded_rows - rows) // 2
    left = (padded_cols - cols) // 2
    padded = np.pad(
        standardized,
        ((top, padded_rows - rows - top), (left, padded_cols - cols - left)),
        mode="symmetric",
    )
    spectrum = np.fft.fft2(padded)
    bank = log_gabor_bank(padded_rows, padded_cols, p)
    window = (slice(top, top + rows), slice(left, left + cols))

    numerator = np.zeros((rows, cols))
    total_amplitude = np.zeros((rows, cols))
    for o in range(p.n_orientations):
        base_energy = np.sqrt(np.sum(bank[0, o] ** 2))
        noise_amplitude = 0.0
        for s in range(p.n_scales):
            response = np.fft.ifft2(spectrum * bank[s, o])[window]
            even, odd = response.real, response.imag
            amplitude = np.abs(response)
            if s == 0 and p.noise_t > 0:
                # Rayleigh: median = sigma * sqrt(ln 4), mean = sigma * sqrt(pi / 2)
                rayleigh_sigma = np.median(amplitude) / np.sqrt(np.log(4.0))
                noise_amplitude = rayleigh_sigma * np.sqrt(np.pi / 2.0)
            energy_ratio = np.sqrt(np.sum(bank[s, o] ** 2)) / base_energy if base_energy > 0 else 0.0
            threshold = p.noise_t * noise_amplitude * energy_ratio
            numerator += np.maximum(np.abs(even) - np.abs(odd) - threshold, 0.0)
            total_amplitude += amplitude

    peak = total_amplitude.max()
    if peak <= 0.0:
        return np.zeros((rows, cols))
    return np.clip(numerator / (total_amplitude + p.epsilon * peak), 0.0, 1.0)
