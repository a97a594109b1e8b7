"""
File name: geometry.py

Description: Phased-array image geometry, rigid poses and the 2-DOF scanner
kinematics that turn joint readings into frame poses.

Frame convention: x is lateral, z is depth along the beam axis and y is the
elevation (out-of-plane) direction. The sector apex sits at the frame origin
and the image plane is y = 0.
"""

from dataclasses import dataclass, field

import numpy as np

from errors import InvalidGeometryError, InvalidKinematicsError, PixelIndexError

UNIT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ImageGeometry:
    """Sector geometry of a phased-array frame; polar arrays are (n_samples, n_rays)."""

    depth_min_m: float
    depth_max_m: float
    fov_rad: float
    n_rays: int
    n_samples: int

    def __post_init__(self):
        values = (self.depth_min_m, self.depth_max_m, self.fov_rad)
        if not all(np.isfinite(v) for v in values):
            raise InvalidGeometryError("Geometry fields must be finite")
        if not 0.0 <= self.depth_min_m < self.depth_max_m:
            raise InvalidGeometryError(
                f"Need 0 <= depth_min_m < depth_max_m, got {self.depth_min_m}, {self.depth_max_m}")
        if not 0.0 < self.fov_rad < np.pi:
            raise InvalidGeometryError(f"fov_rad must lie in (0, pi), got {self.fov_rad}")
        if int(self.n_rays) < 2 or int(self.n_samples) < 2:
            raise InvalidGeometryError("Geometry needs at least 2 rays and 2 samples per ray")
        object.__setattr__(self, "n_rays", int(self.n_rays))
        object.__setattr__(self, "n_samples", int(self.n_samples))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_samples, self.n_rays

    @property
    def angle_step(self) -> float:
        return self.fov_rad / (self.n_rays - 1)

    @property
    def depth_step(self) -> float:
        return (self.depth_max_m - self.depth_min_m) / (self.n_samples - 1)

    @property
    def ray_angles(self) -> np.ndarray:
        return -self.fov_rad / 2.0 + np.arange(self.n_rays) * self.angle_step

    @property
    def sample_depths(self) -> np.ndarray:
        return self.depth_min_m + np.arange(self.n_samples) * self.depth_step

    def ray_directions(self) -> np.ndarray:
        """Unit direction of every scanline in frame coordinates, shape (n_rays, 3)."""
        angles = self.ray_angles
        return np.stack([np.sin(angles), np.zeros_like(angles), np.cos(angles)], axis=1)

    def to_dict(self) -> dict:
        return {
            "depth_min_m": self.depth_min_m,
            "depth_max_m": self.depth_max_m,
            "fov_rad": self.fov_rad,
            "n_rays": self.n_rays,
            "n_samples": self.n_samples,
        }


@dataclass(frozen=True)
class PolarImage:
    geometry: ImageGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != self.geometry.shape:
            raise InvalidGeometryError(
                f"Polar data shape {data.shape} does not match geometry {self.geometry.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidGeometryError("Polar image contains non-finite values")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class CartesianImage:
    """
    Scan-converted frame. Pixel (row i, col j) has its centre at
    x = origin_m[0] + j * pixel_size_m, z = origin_m[1] + i * pixel_size_m.
    """

    width_px: int
    height_px: int
    pixel_size_m: float
    origin_m: tuple[float, float]
    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        expected = (int(self.height_px), int(self.width_px))
        if data.shape != expected or mask.shape != expected:
            raise InvalidGeometryError(
                f"Cartesian data {data.shape} / mask {mask.shape} do not match {expected}")
        if not self.pixel_size_m > 0:
            raise InvalidGeometryError("pixel_size_m must be positive")
        if not np.all(np.isfinite(data)):
            raise InvalidGeometryError("Cartesian image contains non-finite values")
        data = np.where(mask, data, 0.0)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin_m", (float(self.origin_m[0]), float(self.origin_m[1])))

    def with_data(self, data: np.ndarray) -> "CartesianImage":
        return CartesianImage(self.width_px, self.height_px, self.pixel_size_m, self.origin_m, data, self.mask)


@dataclass(frozen=True)
class Pose:
    """Rigid transform p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidKinematicsError("Pose entries must be finite")
        if np.abs(rotation @ rotation.T - np.eye(3)).max() > UNIT_TOLERANCE:
            raise InvalidKinematicsError("Pose rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > UNIT_TOLERANCE:
            raise InvalidKinematicsError("Pose rotation is not a proper rotation (det != +1)")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a single 3-vector or an (..., 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "Pose") -> "Pose":
        """Return self ∘ other (apply `other` first)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def row_major(self) -> list[float]:
        """The 12 entries [R | t] in row-major order, as stored in frames.csv."""
        return [float(v) for v in self.as_matrix()[:3, :].ravel()]


@dataclass(frozen=True)
class ScanKinematics:
    sweep_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    sweep_pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    carriage_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        for name in ("sweep_axis", "sweep_pivot", "carriage_axis"):
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(value)):
                raise InvalidKinematicsError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        for name in ("sweep_axis", "carriage_axis"):
            norm = np.linalg.norm(getattr(self, name))
            if abs(norm - 1.0) > UNIT_TOLERANCE:
                raise InvalidKinematicsError(f"{name} must be a unit vector, got norm {norm:.12f}")


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    sweep_id: int
    sweep_direction: str
    joint_theta_rad: float
    joint_t_m: float
    pose: Pose

    def __post_init__(self):
        if self.sweep_direction not in ("forward", "backward"):
            raise InvalidKinematicsError(f"Unknown sweep direction: {self.sweep_direction}")


def rotation_about_axis(axis: np.ndarray, theta: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    x, y, z = np.asarray(axis, dtype=np.float64)
    skew = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(theta) * skew + (1.0 - np.cos(theta)) * (skew @ skew)


def pose_from_joints(kin: ScanKinematics, theta: float, t: float) -> Pose:
    """
    Frame pose for joint readings of the 2-DOF patch scanner.

    The probe first rotates by `theta` about `sweep_axis` through `sweep_pivot`,
    then the carriage translates it by `t` along `carriage_axis`.

    Args:
        kin (ScanKinematics): Scanner axes.
        theta (float): Rotation joint in radians.
        t (float): Carriage joint in metres.

    Returns:
        Pose: Translate(t * carriage_axis) ∘ RotateAbout(pivot, axis, theta).
    """
    if not (np.isfinite(theta) and np.isfinite(t)):
        raise InvalidKinematicsError("Joint values must be finite")
    rotation = rotation_about_axis(kin.sweep_axis, float(theta))
    translation = kin.sweep_pivot - rotation @ kin.sweep_pivot + float(t) * kin.carriage_axis
    return Pose(rotation, translation)


def pixel_to_world(geo: ImageGeometry, pose: Pose, ray: int, sample: int) -> np.ndarray:
    """World position of polar bin (ray, sample) for a frame at `pose`."""
    if not (0 <= ray < geo.n_rays and 0 <= sample < geo.n_samples):
        raise PixelIndexError(
            f"Bin (ray={ray}, sample={sample}) outside {geo.n_rays} rays x {geo.n_samples} samples")
    angle = geo.ray_angles[ray]
    depth = geo.sample_depths[sample]
    local = np.array([depth * np.sin(angle), 0.0, depth * np.cos(angle)])
    return pose.apply(local)


def sector_points(geo: ImageGeometry, pose: Pose | None = None) -> np.ndarray:
    """All bin positions at once, shape (n_samples, n_rays, 3); identity pose by default."""
    depths = geo.sample_depths[:, None]
    angles = geo.ray_angles[None, :]
    local = np.stack(
        [depths * np.sin(angles), np.zeros((geo.n_samples, geo.n_rays)), depths * np.cos(angles)],
        axis=-1,
    )
    if pose is None:
        return local
    return pose.apply(local)
