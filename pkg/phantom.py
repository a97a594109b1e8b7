"""
File name: phantom.py

Description: Synthetic B-mode simulator. Scanlines are cast against a phantom
mesh; the first hit reflects with a specular falloff in the incidence angle,
everything beneath it is shadowed, and the whole frame carries multiplicative
Rayleigh speckle. Each frame comes with the exact soft label produced by the
labelgen code path.

Goal: Stand in for gelatin-phantom recordings so that the feature pipeline,
the network and the reconstruction can be checked against known surfaces.
"""

from dataclasses import dataclass, field

import numpy as np

from errors import InvalidKinematicsError, SplitError
from geometry import FrameRecord, ImageGeometry, PolarImage, Pose, ScanKinematics, pose_from_joints
from helpers import frame_seed, map_frames
from labelgen import cast_scanlines, hit_bins, splat_gaussians
from mesh import BVH, TriangleMesh, build_shape


@dataclass(frozen=True)
class PhantomSpec:
    mesh: TriangleMesh
    reflect_gain: float = 1.0
    specular_exponent: float = 4.0
    shadow_attenuation: float = 0.15
    speckle_mean: float = 0.12
    speckle_shape: float = float(np.sqrt(2.0 / np.pi))
    noise_floor: float = 0.001
    seed: int = 7
    label_sigma_px: float = 2.0
    max_incidence_rad: float = float(np.radians(80.0))
    anatomy: str = "custom"

    def __post_init__(self):
        for name in ("reflect_gain", "specular_exponent", "speckle_mean", "speckle_shape", "noise_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.shadow_attenuation <= 1.0:
            raise ValueError("shadow_attenuation must lie in [0, 1]")
        if self.label_sigma_px <= 0:
            raise ValueError("label_sigma_px must be positive")

    @classmethod
    def from_config(cls, section: dict, labelgen: dict, shape: str | None = None) -> "PhantomSpec":
        """Build the spec from the phantom and labelgen RunConfig sections."""
        shape = shape or section["shape"]
        mesh = build_shape(shape, section["shape_depth_m"], section["shape_size_m"], section["shape_tilt_rad"])
        return cls(
            mesh=mesh,
            reflect_gain=section["reflect_gain"],
            specular_exponent=section["specular_exponent"],
            shadow_attenuation=section["shadow_attenuation"],
            speckle_mean=section["speckle_mean"],
            speckle_shape=section["speckle_shape"],
            noise_floor=section["noise_floor"],
            seed=section["seed"],
            label_sigma_px=labelgen["sigma_px"],
            max_incidence_rad=labelgen["max_incidence_rad"],
            anatomy=shape,
        )


@dataclass(frozen=True)
class ScanPlan:
    n_sweeps: int = 8
    sweep_angles_rad: list[float] = field(default_factory=lambda: [-0.24, -0.17, -0.1, -0.03, 0.03, 0.1, 0.17, 0.24])
    carriage_range_m: tuple[float, float] = (-0.02, 0.02)
    frames_per_sweep: int = 13
    alternate_direction: bool = True

    def __post_init__(self):
        if self.n_sweeps < 1:
            raise InvalidKinematicsError("n_sweeps must be >= 1")
        if len(self.sweep_angles_rad) != self.n_sweeps:
            raise InvalidKinematicsError(
                f"Need one sweep angle per sweep: {len(self.sweep_angles_rad)} angles for {self.n_sweeps} sweeps")
        if self.frames_per_sweep < 1:
            raise InvalidKinematicsError("frames_per_sweep must be >= 1")
        if len(self.carriage_range_m) != 2:
            raise InvalidKinematicsError("carriage_range_m must be a (start, end) pair")

    @classmethod
    def from_config(cls, section: dict) -> "ScanPlan":
        return cls(
            n_sweeps=section["n_sweeps"],
            sweep_angles_rad=list(section["sweep_angles_rad"]),
            carriage_range_m=tuple(section["carriage_range_m"]),
            frames_per_sweep=section["frames_per_sweep"],
            alternate_direction=section["alternate_direction"],
        )


@dataclass
class SimulatedScan:
    """One simulated acquisition: frame records with polar B-mode frames and labels in frame order."""

    anatomy: str
    mesh: TriangleMesh
    frames: list[FrameRecord]
    images: list[PolarImage]
    labels: list[np.ndarray]


def simulate_frame(spec: PhantomSpec, pose: Pose, geo: ImageGeometry, frame_seed_value: int,
                   bvh: BVH | None = None) -> tuple[PolarImage, np.ndarray]:
    """
    One speckled frame and its soft label.

    Args:
        spec (PhantomSpec): Phantom mesh and contrast model.
        pose (Pose): Probe pose.
        geo (ImageGeometry): Sector geometry.
        frame_seed_value (int): Per-frame seed, mixed with spec.seed.
        bvh (BVH, optional): Prebuilt index over spec.mesh.

    Returns:
        tuple: (PolarImage, label array on the same lattice).
    """
    bvh = bvh or BVH(spec.mesh)
    rng = np.random.default_rng(frame_seed(spec.seed, frame_seed_value))
    echo = np.full(geo.shape, spec.speckle_mean)

    hits = cast_scanlines(bvh, pose, geo)
    reflecting, reflecting_rays = hit_bins(hits, geo, np.pi / 2)
    for sample, ray in zip(reflecting, reflecting_rays):
        echo[sample, ray] += spec.reflect_gain * hits.cos_incidence[ray] ** spec.specular_exponent
        echo[sample + 1:, ray] *= spec.shadow_attenuation

    speckle = rng.rayleigh(spec.speckle_shape, size=geo.shape)
    noise = spec.noise_floor * rng.rayleigh(spec.speckle_shape, size=geo.shape)
    image = PolarImage(geo, echo * speckle + noise)

    samples, rays = hit_bins(hits, geo, spec.max_incidence_rad)
    label = splat_gaussians(geo.shape, samples, rays, spec.label_sigma_px)
    return image, label


def carriage_positions(plan: ScanPlan, sweep: int) -> tuple[np.ndarray, str]:
    start, end = plan.carriage_range_m
    positions = np.linspace(start, end, plan.frames_per_sweep) if plan.frames_per_sweep > 1 else np.array([start])
    if plan.alternate_direction and sweep % 2 == 1:
        return positions[::-1], "backward"
    return positions, "forward"


def plan_frames(kin: ScanKinematics, plan: ScanPlan) -> list[FrameRecord]:
    """Frame records for the whole plan, sweeps in order, ids from 0."""
    records = []
    for sweep, theta in enumerate(plan.sweep_angles_rad):
        positions, direction = carriage_positions(plan, sweep)
        for t in positions:
            records.append(FrameRecord(len(records), sweep, direction, float(theta), float(t),
                                       pose_from_joints(kin, theta, t)))
    return records


def simulate_scan(spec: PhantomSpec, kin: ScanKinematics, plan: ScanPlan, geo: ImageGeometry,
                  workers: int = 1) -> SimulatedScan:
    """Simulate every frame of the plan; the per-frame seed is the frame id."""
    frames = plan_frames(kin, plan)
    bvh = BVH(spec.mesh)
    pairs = map_frames(lambda record: simulate_frame(spec, record.pose, geo, record.frame_id, bvh), frames, workers)
    return SimulatedScan(spec.anatomy, spec.mesh, frames, [p[0] for p in pairs], [p[1] for p in pairs])


def split_train_test(frames: list[FrameRecord], train_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """
    Seeded split at sweep granularity.

    Sweeps are shuffled with `seed`; the training side takes the shortest
    prefix whose frame share is closest to `train_fraction` (at least one
    sweep on each side).

    Returns:
        tuple: (train frame ids, test frame ids), each sorted.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    sweeps = sorted({f.sweep_id for f in frames})
    if len(sweeps) < 2:
        raise SplitError(f"Need at least 2 sweeps to split, got {len(sweeps)}")
    order = np.random.default_rng(seed).permutation(len(sweeps))
    shuffled = [sweeps[i] for i in order]
    sizes = np.array([sum(1 for f in frames if f.sweep_id == s) for s in shuffled])
    shares = np.cumsum(sizes)[:-1] / sizes.sum()
    n_train = int(np.argmin(np.abs(shares - train_fraction))) + 1
    train_sweeps = set(shuffled[:n_train])
    train = sorted(f.frame_id for f in frames if f.sweep_id in train_sweeps)
    test = sorted(f.frame_id for f in frames if f.sweep_id not in train_sweeps)
    return train, test
