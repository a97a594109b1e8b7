"""
File name: scan_conversion.py

Description: Resampling between the polar (sample x ray) lattice of a
phased-array frame and Cartesian pixel grids. Both directions use bilinear
interpolation through scipy.ndimage.map_coordinates.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from errors import InvalidGeometryError, OutOfBoundsError
from geometry import CartesianImage, ImageGeometry, PolarImage, sector_points

GRID_MARGIN_PX = 1
# Pixels this close to the sector are kept in the mask so that every polar
# sample has all four bilinear neighbours inside it; the mask is cut at the
# grid edge, which the one-pixel margin keeps outside every neighbour.
MASK_DILATION_PX = 1.5


@dataclass(frozen=True)
class CartesianGrid:
    width_px: int
    height_px: int
    pixel_size_m: float
    origin_m: tuple[float, float]

    @classmethod
    def of(cls, image: CartesianImage) -> "CartesianGrid":
        return cls(image.width_px, image.height_px, image.pixel_size_m, image.origin_m)

    def pixel_centres(self) -> tuple[np.ndarray, np.ndarray]:
        cols = self.origin_m[0] + np.arange(self.width_px) * self.pixel_size_m
        rows = self.origin_m[1] + np.arange(self.height_px) * self.pixel_size_m
        x, z = np.meshgrid(cols, rows)
        return x, z


def cartesian_grid(geo: ImageGeometry, pixel_size: float) -> CartesianGrid:
    """Axis-aligned bounding box of the sector plus a fixed pixel margin."""
    if not (np.isfinite(pixel_size) and pixel_size > 0):
        raise InvalidGeometryError(f"pixel_size must be positive, got {pixel_size}")
    half = geo.fov_rad / 2.0
    x_max = geo.depth_max_m * np.sin(half)
    z_min = geo.depth_min_m * np.cos(half)
    z_max = geo.depth_max_m
    width = int(np.ceil(2.0 * x_max / pixel_size - 1e-9)) + 1 + 2 * GRID_MARGIN_PX
    height = int(np.ceil((z_max - z_min) / pixel_size - 1e-9)) + 1 + 2 * GRID_MARGIN_PX
    origin = (-x_max - GRID_MARGIN_PX * pixel_size, z_min - GRID_MARGIN_PX * pixel_size)
    return CartesianGrid(width, height, float(pixel_size), origin)


def sector_distance(geo: ImageGeometry, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Euclidean distance from in-plane points to the sector (0 inside)."""
    half = geo.fov_rad / 2.0
    radius = np.hypot(x, z)
    angle = np.arctan2(x, z)
    radial = np.maximum(np.maximum(geo.depth_min_m - radius, radius - geo.depth_max_m), 0.0)
    distance = np.where(np.abs(angle) <= half, radial, np.inf)
    for edge in (-half, half):
        ux, uz = np.sin(edge), np.cos(edge)
        along = np.clip(x * ux + z * uz, geo.depth_min_m, geo.depth_max_m)
        distance = np.minimum(distance, np.hypot(x - along * ux, z - along * uz))
    return distance


def sector_mask(geo: ImageGeometry, grid: CartesianGrid) -> np.ndarray:
    x, z = grid.pixel_centres()
    return sector_distance(geo, x, z) <= MASK_DILATION_PX * grid.pixel_size_m


def polar_coordinates(geo: ImageGeometry, x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (sample, ray) indices of in-plane points, clamped to the lattice."""
    samples = (np.hypot(x, z) - geo.depth_min_m) / geo.depth_step
    rays = (np.arctan2(x, z) + geo.fov_rad / 2.0) / geo.angle_step
    return np.clip(samples, 0.0, geo.n_samples - 1), np.clip(rays, 0.0, geo.n_rays - 1)


def polar_to_cartesian(img: PolarImage, pixel_size: float, grid: CartesianGrid | None = None) -> CartesianImage:
    """
    Scan-convert a polar frame onto a Cartesian pixel grid.

    Args:
        img (PolarImage): Source frame.
        pixel_size (float): Pixel edge length in metres.
        grid (CartesianGrid, optional): Explicit target grid; by default the
            sector bounding box from `cartesian_grid`.

    Returns:
        CartesianImage: Bilinear samples inside the mask, zeros outside.
    """
    geo = img.geometry
    if grid is None:
        grid = cartesian_grid(geo, pixel_size)
    elif not np.isclose(grid.pixel_size_m, pixel_size):
        raise InvalidGeometryError("pixel_size disagrees with the explicit target grid")
    x, z = grid.pixel_centres()
    mask = sector_distance(geo, x, z) <= MASK_DILATION_PX * grid.pixel_size_m
    samples, rays = polar_coordinates(geo, x[mask], z[mask])
    data = np.zeros((grid.height_px, grid.width_px))
    data[mask] = map_coordinates(img.data, [samples, rays], order=1, mode="nearest")
    return CartesianImage(grid.width_px, grid.height_px, grid.pixel_size_m, grid.origin_m, data, mask)


def cartesian_to_polar(img: CartesianImage, geo: ImageGeometry) -> PolarImage:
    """
    Resample a Cartesian frame back onto the polar lattice of `geo`.

    Interpolation weights are renormalized over in-mask neighbours, so masked
    pixels never pull values towards zero; a sample whose four neighbours are
    all masked out becomes 0.
    """
    points = sector_points(geo)
    cols = (points[..., 0] - img.origin_m[0]) / img.pixel_size_m
    rows = (points[..., 2] - img.origin_m[1]) / img.pixel_size_m
    tolerance = 1e-9
    if (cols.min() < -tolerance or rows.min() < -tolerance
            or cols.max() > img.width_px - 1 + tolerance or rows.max() > img.height_px - 1 + tolerance):
        raise OutOfBoundsError("Sector footprint extends beyond the Cartesian image")
    coords = [rows.ravel(), cols.ravel()]
    weights = img.mask.astype(np.float64)
    numerator = map_coordinates(img.data * weights, coords, order=1, mode="nearest")
    denominator = map_coordinates(weights, coords, order=1, mode="nearest")
    values = np.zeros_like(numerator)
    inside = denominator > 1e-12
    values[inside] = numerator[inside] / denominator[inside]
    return PolarImage(geo, values.reshape(geo.shape))
