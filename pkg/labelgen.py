"""
File name: labelgen.py

Description: Visibility-based ground truth. Annotated surface points are
registered to the reference mesh with point-to-surface ICP, then every frame
casts its scanlines against the mesh and labels the first visible hit, softened
by a 2-D Gaussian for registration uncertainty.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from errors import DegenerateInputError, InvalidGeometryError
from geometry import FrameRecord, ImageGeometry, Pose
from helpers import map_frames
from mesh import BVH, PointCloud, TriangleMesh

COLLINEAR_RATIO = 1e-9
SPLAT_TRUNCATE = 4.0


@dataclass(frozen=True)
class IcpResult:
    transform: Pose
    rmse_m: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class ScanlineHits:
    """First hit per scanline: distance (inf on a miss) and |cos| of the incidence angle."""

    t: np.ndarray
    cos_incidence: np.ndarray


def _as_bvh(target: TriangleMesh | BVH) -> BVH:
    return target if isinstance(target, BVH) else BVH(target)


def kabsch(source: np.ndarray, target: np.ndarray) -> Pose:
    """Least-squares rigid transform mapping paired `source` points onto `target`."""
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    covariance = (source - source_mean).T @ (target - target_mean)
    u, _, vt = np.linalg.svd(covariance)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(rotation, target_mean - rotation @ source_mean)


def _check_registrable(points: np.ndarray) -> None:
    if len(points) < 3:
        raise DegenerateInputError(f"ICP needs at least 3 source points, got {len(points)}")
    singular = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if singular[0] == 0.0 or singular[1] <= COLLINEAR_RATIO * singular[0]:
        raise DegenerateInputError("ICP source points are collinear")


def icp_register(source: PointCloud, target: TriangleMesh | BVH, max_iter: int = 100, tol: float = 1e-10,
                 init: Pose | None = None) -> IcpResult:
    """
    Point-to-surface ICP.

    Args:
        source (PointCloud): Annotated surface points.
        target (TriangleMesh | BVH): Reference surface.
        max_iter (int): Iteration cap.
        tol (float): Stop when the RMSE improves by less than this (metres).
        init (Pose, optional): Starting transform, identity by default.

    Returns:
        IcpResult: Transform taking source into the mesh frame. The RMSE history
        is non-increasing; a step that would raise the RMSE ends the run.
    """
    points = source.points
    _check_registrable(points)
    if max_iter < 0:
        raise ValueError("max_iter must be >= 0")
    bvh = _as_bvh(target)
    current = init or Pose.identity()
    moved = current.apply(points)
    closest, distance, _ = bvh.closest_points(moved)
    rmse = float(np.sqrt(np.mean(distance ** 2)))
    history = [rmse]
    iterations = 0
    converged = rmse == 0.0

    while not converged and iterations < max_iter:
        iterations += 1
        candidate = kabsch(moved, closest).compose(current)
        candidate_moved = candidate.apply(points)
        candidate_closest, candidate_distance, _ = bvh.closest_points(candidate_moved)
        candidate_rmse = float(np.sqrt(np.mean(candidate_distance ** 2)))
        if candidate_rmse > rmse:
            converged = True
            break
        improvement = rmse - candidate_rmse
        current, moved, closest, rmse = candidate, candidate_moved, candidate_closest, candidate_rmse
        history.append(rmse)
        converged = improvement < tol or rmse == 0.0

    return IcpResult(current, rmse, iterations, converged, history)


def cast_scanlines(target: TriangleMesh | BVH, pose: Pose, geo: ImageGeometry) -> ScanlineHits:
    """First hit of every scanline of a frame at `pose`."""
    bvh = _as_bvh(target)
    directions = pose.rotate(geo.ray_directions())
    origins = np.repeat(pose.translation[None, :], geo.n_rays, axis=0)
    t, tri = bvh.intersect(origins, directions)
    cos_incidence = np.zeros(geo.n_rays)
    hit = tri >= 0
    cos_incidence[hit] = np.abs(np.einsum("ij,ij->i", directions[hit], bvh.normals[tri[hit]]))
    return ScanlineHits(t, cos_incidence)


def hit_bins(hits: ScanlineHits, geo: ImageGeometry, max_incidence_rad: float) -> tuple[np.ndarray, np.ndarray]:
    """(sample, ray) bins of in-range first hits whose incidence angle passes the gate."""
    incidence = np.arccos(np.clip(hits.cos_incidence, 0.0, 1.0))
    visible = (np.isfinite(hits.t) & (hits.t >= geo.depth_min_m) & (hits.t <= geo.depth_max_m)
               & (incidence <= max_incidence_rad + 1e-12))
    rays = np.flatnonzero(visible)
    samples = np.rint((hits.t[rays] - geo.depth_min_m) / geo.depth_step).astype(np.int64)
    return np.clip(samples, 0, geo.n_samples - 1), rays


def splat_gaussians(shape: tuple[int, int], samples: np.ndarray, rays: np.ndarray, sigma_px: float) -> np.ndarray:
    """
    Binary hit map convolved with a normalized 2-D Gaussian, then scaled so its
    peak is 1. An isolated hit becomes a unit-peak Gaussian; overlapping hits
    add before the scaling.
    """
    if sigma_px <= 0:
        raise ValueError("sigma_px must be positive")
    hits = np.zeros(shape)
    if len(samples) == 0:
        return hits
    hits[samples, rays] = 1.0
    label = ndimage.gaussian_filter(hits, sigma_px, mode="constant", cval=0.0, truncate=SPLAT_TRUNCATE)
    return label / label.max()


def generate_frame_label(target: TriangleMesh | BVH, pose: Pose, geo: ImageGeometry, sigma_px: float = 2.0,
                         max_incidence_rad: float = np.radians(80.0)) -> np.ndarray:
    """
    Soft label on the polar lattice of one frame.

    Args:
        target (TriangleMesh | BVH): Surface in world coordinates.
        pose (Pose): Frame pose.
        geo (ImageGeometry): Sector geometry.
        sigma_px (float): Gaussian sigma in bins.
        max_incidence_rad (float): Incidence gate; pi / 2 labels every first hit.

    Returns:
        np.ndarray: Label of shape (n_samples, n_rays) with values in [0, 1].
    """
    if not 0.0 <= max_incidence_rad <= np.pi / 2 + 1e-12:
        raise InvalidGeometryError("max_incidence_rad must lie in [0, pi/2]")
    hits = cast_scanlines(target, pose, geo)
    samples, rays = hit_bins(hits, geo, max_incidence_rad)
    return splat_gaussians(geo.shape, samples, rays, sigma_px)


def generate_sequence_labels(target: TriangleMesh | BVH, frames: list[FrameRecord], geo: ImageGeometry,
                             sigma_px: float = 2.0, max_incidence_rad: float = np.radians(80.0),
                             workers: int = 1) -> list[np.ndarray]:
    """Per-frame labels in frame order; the BVH is built once and shared."""
    if not frames:
        raise DegenerateInputError("Cannot label an empty frame sequence")
    bvh = _as_bvh(target)
    return map_frames(lambda frame: generate_frame_label(bvh, frame.pose, geo, sigma_px, max_incidence_rad),
                      frames, workers)
