"""
File name: features.py

Description: Shadow-boundary extraction from confidence maps, aggregation
with phase symmetry, and the full per-frame feature pipeline
(Cartesian B-mode -> polar -> features -> Cartesian).
"""

import sys
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from confidence_map import ConfidenceParams, solve_confidence
from errors import DimensionError
from geometry import CartesianImage, ImageGeometry, PolarImage
from helpers import map_frames
from phase_symmetry import LogGaborParams, phase_symmetry
from scan_conversion import CartesianGrid, cartesian_to_polar, polar_to_cartesian


@dataclass(frozen=True)
class FeatureResult:
    image: CartesianImage
    residual: float
    iterations: int


def gaussian_kernel(size_px: int) -> np.ndarray:
    """Normalized 1-D Gaussian with an odd tap count 2 * (size // 2) + 1 and sigma = size / 4."""
    if size_px < 1:
        raise ValueError("blur_kernel_px must be >= 1")
    half = size_px // 2
    sigma = size_px / 4.0
    taps = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-taps ** 2 / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def shadow_boundary(conf: np.ndarray, sobel_threshold: float, blur_kernel_px: int) -> np.ndarray:
    """
    Blurred binary edge map of a confidence map.

    Args:
        conf (np.ndarray): Confidence values in [0, 1].
        sobel_threshold (float): Fraction of the peak gradient magnitude.
        blur_kernel_px (int): Gaussian kernel size.

    Returns:
        np.ndarray: Map in [0, 1], peak rescaled to 1 unless all zero.
    """
    if not 0.0 < sobel_threshold < 1.0:
        raise ValueError(f"sobel_threshold must lie in (0, 1), got {sobel_threshold}")
    conf = np.asarray(conf, dtype=np.float64)
    if conf.ndim != 2:
        raise DimensionError(f"shadow_boundary expects a 2-D map, got shape {conf.shape}")
    kernel = gaussian_kernel(blur_kernel_px)

    magnitude = np.hypot(ndimage.sobel(conf, axis=0, mode="nearest"),
                         ndimage.sobel(conf, axis=1, mode="nearest"))
    peak = magnitude.max()
    if peak <= 0.0:
        return np.zeros_like(conf)
    edges = (magnitude >= sobel_threshold * peak).astype(np.float64)
    blurred = ndimage.correlate1d(edges, kernel, axis=0, mode="constant")
    blurred = ndimage.correlate1d(blurred, kernel, axis=1, mode="constant")
    top = blurred.max()
    return np.clip(blurred / top, 0.0, 1.0) if top > 0 else blurred


def aggregate(ps: np.ndarray, shadow: np.ndarray) -> np.ndarray:
    ps = np.asarray(ps, dtype=np.float64)
    shadow = np.asarray(shadow, dtype=np.float64)
    if ps.shape != shadow.shape:
        raise DimensionError(f"Cannot aggregate maps of shapes {ps.shape} and {shadow.shape}")
    return ps * shadow


def polar_features(img: PolarImage, lg: LogGaborParams, cp: ConfidenceParams,
                   sobel_threshold: float, blur_kernel_px: int) -> tuple[np.ndarray, float, int]:
    """Aggregated feature map on the polar lattice, with the confidence solver residual and iterations."""
    ps = phase_symmetry(img, lg)
    solved = solve_confidence(img.data, cp)
    shadow = shadow_boundary(solved.values, sobel_threshold, blur_kernel_px)
    return aggregate(ps, shadow), solved.residual, solved.iterations


def run_feature_pipeline(bmode: CartesianImage, geo: ImageGeometry, lg: LogGaborParams, cp: ConfidenceParams,
                         sobel_threshold: float, blur_kernel_px: int) -> FeatureResult:
    """
    Cartesian B-mode to Cartesian aggregated feature map on the same grid and mask.

    An all-zero frame short-circuits to an all-zero map.
    """
    if not np.any(bmode.data):
        return FeatureResult(bmode.with_data(np.zeros_like(bmode.data)), 0.0, 0)
    polar = cartesian_to_polar(bmode, geo)
    # Bilinear resampling of a nonnegative image stays nonnegative up to rounding.
    polar = PolarImage(geo, np.clip(polar.data, 0.0, None))
    values, residual, iterations = polar_features(polar, lg, cp, sobel_threshold, blur_kernel_px)
    back = polar_to_cartesian(PolarImage(geo, values), bmode.pixel_size_m, grid=CartesianGrid.of(bmode))
    image = bmode.with_data(np.clip(back.data, 0.0, 1.0))
    return FeatureResult(image, residual, iterations)


def feature_pipeline(bmode: CartesianImage, geo: ImageGeometry, lg: LogGaborParams, cp: ConfidenceParams,
                     sobel_threshold: float, blur_kernel_px: int) -> CartesianImage:
    return run_feature_pipeline(bmode, geo, lg, cp, sobel_threshold, blur_kernel_px).image


def feature_batch(frames: list[CartesianImage], geo: ImageGeometry, lg: LogGaborParams, cp: ConfidenceParams,
                  sobel_threshold: float, blur_kernel_px: int, workers: int = 1,
                  verbose: bool = False) -> list[FeatureResult]:
    """Run the pipeline over many frames on a thread pool; results keep frame order."""
    def one(frame: CartesianImage) -> FeatureResult:
        return run_feature_pipeline(frame, geo, lg, cp, sobel_threshold, blur_kernel_px)

    results = map_frames(one, frames, workers)
    if verbose:
        worst = max((r.residual for r in results), default=0.0)
        print(f"[DEBUG] Features for {len(results)} frames, worst solver residual {worst:.3e}", file=sys.stderr)
    return results
