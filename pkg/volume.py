"""
File name: volume.py

Description: Pose-based compounding of per-frame polar maps into a world-space
voxel grid, surface point extraction, and detached-header NRRD export/import.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import AlignmentError, FileFormatError, InvalidGeometryError
from geometry import FrameRecord, ImageGeometry, sector_points
from helpers import map_frames
from mesh import PointCloud

MODES = ("max", "mean")
SPLATS = ("nearest", "trilinear")


@dataclass(frozen=True)
class GridSpec:
    """Voxel (i, j, k) has its centre at origin_m + (i, j, k) * spacing_m."""

    origin_m: tuple[float, float, float]
    spacing_m: tuple[float, float, float]
    dims: tuple[int, int, int]

    def __post_init__(self):
        if len(self.origin_m) != 3 or len(self.spacing_m) != 3 or len(self.dims) != 3:
            raise InvalidGeometryError("Grid origin, spacing and dims need three entries each")
        if min(self.spacing_m) <= 0:
            raise InvalidGeometryError("Voxel spacing must be positive")
        if min(self.dims) < 1:
            raise InvalidGeometryError("Grid dims must be >= 1")
        object.__setattr__(self, "origin_m", tuple(float(v) for v in self.origin_m))
        object.__setattr__(self, "spacing_m", tuple(float(v) for v in self.spacing_m))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))


@dataclass
class VolumeGrid:
    grid: GridSpec
    data: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        if self.data.shape != self.grid.dims:
            raise InvalidGeometryError(f"Volume data {self.data.shape} does not match dims {self.grid.dims}")

    @property
    def origin_m(self) -> tuple[float, float, float]:
        return self.grid.origin_m

    @property
    def spacing_m(self) -> tuple[float, float, float]:
        return self.grid.spacing_m

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grid.dims

    def voxel_centres(self, index: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin_m) + np.asarray(index, dtype=np.float64) * np.asarray(self.spacing_m)


def grid_for_frames(frames: list[FrameRecord], geo: ImageGeometry, spacing_m: float, margin_voxels: int = 1) -> GridSpec:
    """Isotropic grid covering every posed sector footprint plus a voxel margin."""
    if not frames:
        raise AlignmentError("Cannot size a grid without frames")
    points = np.concatenate([sector_points(geo, f.pose).reshape(-1, 3) for f in frames])
    low = points.min(axis=0) - margin_voxels * spacing_m
    high = points.max(axis=0) + margin_voxels * spacing_m
    dims = tuple(int(v) + 1 for v in np.ceil((high - low) / spacing_m))
    return GridSpec(tuple(low), (spacing_m,) * 3, dims)


def _splat_targets(grid: GridSpec, points: np.ndarray, values: np.ndarray, splat: str):
    """Voxel indices, values and weights receiving each sample."""
    continuous = (points - np.asarray(grid.origin_m)) / np.asarray(grid.spacing_m)
    dims = np.asarray(grid.dims)
    if splat == "nearest":
        index = np.rint(continuous).astype(np.int64)
        weights = np.ones(len(points))
        out_values = values
    else:
        base = np.floor(continuous).astype(np.int64)
        frac = continuous - base
        corners = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)])
        index = (base[:, None, :] + corners[None, :, :]).reshape(-1, 3)
        corner_weights = np.prod(np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=2)
        weights = corner_weights.reshape(-1)
        out_values = np.repeat(values, 8)
    inside = np.all((index >= 0) & (index < dims), axis=1)
    return index[inside], out_values[inside], weights[inside]


def _accumulate(frames: list[FrameRecord], maps: list[np.ndarray], geo: ImageGeometry, grid: GridSpec,
                mode: str, splat: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Unnormalized accumulation of one chunk of frames: running max, or value and weight sums."""
    data = np.zeros(grid.dims)
    weight = np.zeros(grid.dims) if mode == "mean" else None
    for frame, values in zip(frames, maps):
        points = sector_points(geo, frame.pose).reshape(-1, 3)
        index, contribution, w = _splat_targets(grid, points, values.reshape(-1), splat)
        target = (index[:, 0], index[:, 1], index[:, 2])
        if mode == "max":
            np.maximum.at(data, target, contribution * w)
        else:
            np.add.at(data, target, contribution * w)
            np.add.at(weight, target, w)
    return data, weight


def compound(frames: list[FrameRecord], maps: list[np.ndarray], geo: ImageGeometry, grid: GridSpec,
             mode: str = "max", splat: str = "nearest", workers: int = 1) -> VolumeGrid:
    """
    Splat every polar bin value at its world position into the grid.

    Args:
        frames (list[FrameRecord]): Frames with poses.
        maps (list[np.ndarray]): One (n_samples, n_rays) map per frame, values in [0, 1].
        geo (ImageGeometry): Sector geometry shared by the maps.
        grid (GridSpec): Target voxel grid.
        mode (str): 'max' keeps the running maximum; 'mean' averages contributions.
        splat (str): 'nearest' voxel or 'trilinear' weights (max mode keeps the
            largest weight * value).
        workers (int): Threads, each accumulating a contiguous chunk of frames into
            its own partial grid. Partials are merged in chunk order.

    Returns:
        VolumeGrid: Compounded volume; untouched voxels are 0.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown compounding mode '{mode}', expected one of {MODES}")
    if splat not in SPLATS:
        raise ValueError(f"Unknown splat '{splat}', expected one of {SPLATS}")
    if len(frames) != len(maps):
        raise AlignmentError(f"{len(maps)} maps for {len(frames)} frames")
    maps = [np.asarray(values, dtype=np.float64) for values in maps]
    for values in maps:
        if values.shape != geo.shape:
            raise AlignmentError(f"Map shape {values.shape} does not match geometry {geo.shape}")

    chunks = [c for c in np.array_split(np.arange(len(frames)), max(1, min(workers, len(frames)))) if len(c)]
    partials = map_frames(
        lambda chunk: _accumulate([frames[i] for i in chunk], [maps[i] for i in chunk], geo, grid, mode, splat),
        chunks, workers)
    if not partials:
        partials = [_accumulate([], [], geo, grid, mode, splat)]
    data, weight = partials[0]
    for part_data, part_weight in partials[1:]:
        if mode == "max":
            np.maximum(data, part_data, out=data)
        else:
            data += part_data
            weight += part_weight
    if mode == "mean":
        touched = weight > 0
        data[touched] = data[touched] / weight[touched]
    return VolumeGrid(grid, np.clip(data, 0.0, 1.0), weight)


def extract_surface_points(vol: VolumeGrid, threshold: float) -> PointCloud:
    """Voxel centres with value >= threshold, in world coordinates."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return PointCloud(vol.voxel_centres(np.argwhere(vol.data >= threshold)))


# ---------------------------------------------------------------- NRRD

def _nrrd_paths(path: str | Path) -> tuple[Path, Path]:
    header = Path(path)
    return header, header.with_suffix(".raw")


def export_nrrd(vol: VolumeGrid, path: str | Path) -> tuple[Path, Path]:
    """
    Detached-header NRRD: `path` holds the header, `<stem>.raw` the payload
    (little-endian float32, first axis fastest).
    """
    header_path, raw_path = _nrrd_paths(path)
    sx, sy, sz = vol.spacing_m
    lines = [
        "NRRD0004",
        "type: float",
        "dimension: 3",
        "space dimension: 3",
        f"sizes: {' '.join(str(d) for d in vol.dims)}",
        f"space directions: ({sx!r},0,0) (0,{sy!r},0) (0,0,{sz!r})",
        "kinds: domain domain domain",
        "endian: little",
        "encoding: raw",
        f"space origin: ({','.join(repr(v) for v in vol.origin_m)})",
        f"data file: {raw_path.name}",
    ]
    header_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(np.asarray(vol.data, dtype="<f4").tobytes(order="F"))
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return header_path, raw_path


def _vector(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.strip().strip("()").split(","))


def read_nrrd(path: str | Path) -> VolumeGrid:
    """Read a header written by `export_nrrd`; data comes back as float64 holding the float32 values."""
    header_path = Path(path)
    lines = header_path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("NRRD"):
        raise FileFormatError(f"{header_path} is not an NRRD header")
    fields = {}
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise FileFormatError(f"Malformed NRRD line: {line!r}")
        fields[key.strip()] = value.strip()
    if fields.get("type") != "float" or fields.get("encoding") != "raw" or fields.get("endian", "little") != "little":
        raise FileFormatError("Only raw little-endian float NRRD volumes are supported")
    dims = tuple(int(v) for v in fields["sizes"].split())
    directions = fields["space directions"].split()
    spacing = tuple(_vector(d)[axis] for axis, d in enumerate(directions))
    origin = _vector(fields["space origin"])
    raw_path = header_path.parent / fields["data file"]
    payload = np.frombuffer(raw_path.read_bytes(), dtype="<f4")
    if payload.size != int(np.prod(dims)):
        raise FileFormatError(f"{raw_path} holds {payload.size} values, expected {int(np.prod(dims))}")
    data = payload.reshape(dims, order="F").astype(np.float64)
    return VolumeGrid(GridSpec(origin, spacing, dims), data)
