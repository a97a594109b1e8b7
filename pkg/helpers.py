"""
File name: helpers.py

Description: File-format readers and writers shared by the CLI subcommands
(PFM images with key=value sidecars, frame directories, ASCII PLY, PGM),
the deterministic seed mixer, a frame-parallel map, and console reports.
"""

import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from errors import FileFormatError
from geometry import CartesianImage, FrameRecord, ImageGeometry, PolarImage, Pose, ScanKinematics
from scan_conversion import CartesianGrid, sector_mask

FRAME_FILE = "frame_{:06d}.pfm"
LABEL_FILE = "label_{:06d}.pfm"
FEATURE_FILE = "feature_{:06d}.pfm"
PRED_FILE = "pred_{:06d}.pfm"
FRAMES_CSV = "frames.csv"
SCAN_META = "geometry.meta"

POSE_COLUMNS = [f"m{row}{col}" for row in range(3) for col in range(4)]
FRAME_COLUMNS = ["frame_id", "sweep_id", "sweep_direction", "joint_theta_rad", "joint_t_m"] + POSE_COLUMNS

MASK64 = (1 << 64) - 1


def splitmix64(value: int) -> int:
    """One step of the SplitMix64 generator, used to derive per-frame seeds."""
    z = (int(value) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def frame_seed(seed: int, frame_id: int) -> int:
    return (int(seed) ^ splitmix64(frame_id)) & MASK64


def map_frames(func, items: list, workers: int = 1) -> list:
    """Apply `func` to every item, optionally on a thread pool; output keeps input order."""
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------- PFM + sidecar

def write_pfm(path: str | Path, data: np.ndarray) -> None:
    """Write a grayscale PFM (little-endian float32, scale -1.0, bottom row first)."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise FileFormatError(f"PFM needs a 2-D array, got shape {data.shape}")
    height, width = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise FileFormatError(f"{path}: only grayscale PFM ('Pf') is supported, got {magic!r}")
        try:
            width, height = (int(v) for v in f.readline().split())
            scale = float(f.readline().strip())
        except ValueError as e:
            raise FileFormatError(f"{path}: malformed PFM header: {e}") from e
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read()
    if len(payload) < width * height * 4:
        raise FileFormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(payload, dtype=dtype, count=width * height).reshape(height, width)
    return np.flipud(data).astype(np.float64)


def _format_value(value) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def meta_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".meta")


def write_meta(path: str | Path, fields: dict) -> None:
    """Write a UTF-8 key=value sidecar."""
    lines = [f"{key}={_format_value(value)}" for key, value in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_meta(path: str | Path) -> dict[str, str]:
    fields = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FileFormatError(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def geometry_from_meta(fields: dict[str, str]) -> ImageGeometry:
    try:
        return ImageGeometry(
            depth_min_m=float(fields["depth_min_m"]),
            depth_max_m=float(fields["depth_max_m"]),
            fov_rad=float(fields["fov_rad"]),
            n_rays=int(fields["n_rays"]),
            n_samples=int(fields["n_samples"]),
        )
    except KeyError as e:
        raise FileFormatError(f"Sidecar is missing geometry field {e}") from e


def save_polar(path: str | Path, img: PolarImage) -> None:
    write_pfm(path, img.data)
    write_meta(meta_path(path), {"kind": "polar", **img.geometry.to_dict()})


def save_cartesian(path: str | Path, img: CartesianImage, geo: ImageGeometry) -> None:
    write_pfm(path, img.data)
    write_meta(meta_path(path), {
        "kind": "cartesian",
        **geo.to_dict(),
        "pixel_size_m": img.pixel_size_m,
        "origin_m": img.origin_m,
        "width_px": img.width_px,
        "height_px": img.height_px,
    })


def load_image(path: str | Path) -> tuple[PolarImage | CartesianImage, ImageGeometry]:
    """
    Read a PFM and its sidecar.

    Returns:
        tuple: (PolarImage or CartesianImage, ImageGeometry). Cartesian masks
        are rebuilt from the geometry stored in the sidecar.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"File does not exist: {path}")
    sidecar = meta_path(path)
    if not sidecar.is_file():
        raise FileFormatError(f"Missing sidecar metadata for {path}")
    fields = read_meta(sidecar)
    geo = geometry_from_meta(fields)
    data = read_pfm(path)
    kind = fields.get("kind", "polar")
    if kind == "polar":
        return PolarImage(geo, data), geo
    if kind == "cartesian":
        grid = CartesianGrid(
            width_px=int(fields["width_px"]),
            height_px=int(fields["height_px"]),
            pixel_size_m=float(fields["pixel_size_m"]),
            origin_m=tuple(_floats(fields["origin_m"])),
        )
        mask = sector_mask(geo, grid)
        return CartesianImage(grid.width_px, grid.height_px, grid.pixel_size_m, grid.origin_m, data, mask), geo
    raise FileFormatError(f"{sidecar}: unknown image kind {kind!r}")


# ---------------------------------------------------------------- frame directories

def write_scan_meta(directory: str | Path, geo: ImageGeometry, kin: ScanKinematics,
                    pixel_size_m: float, anatomy: str = "unknown") -> None:
    write_meta(Path(directory) / SCAN_META, {
        **geo.to_dict(),
        "pixel_size_m": pixel_size_m,
        "sweep_axis": kin.sweep_axis,
        "sweep_pivot": kin.sweep_pivot,
        "carriage_axis": kin.carriage_axis,
        "anatomy": anatomy,
    })


def read_scan_meta(directory: str | Path) -> tuple[ImageGeometry, ScanKinematics, float, str]:
    path = Path(directory) / SCAN_META
    if not path.is_file():
        raise FileNotFoundError(f"Frame directory has no {SCAN_META}: {directory}")
    fields = read_meta(path)
    kin = ScanKinematics(
        sweep_axis=np.array(_floats(fields["sweep_axis"])),
        sweep_pivot=np.array(_floats(fields["sweep_pivot"])),
        carriage_axis=np.array(_floats(fields["carriage_axis"])),
    )
    return geometry_from_meta(fields), kin, float(fields["pixel_size_m"]), fields.get("anatomy", "unknown")


def write_frames_csv(directory: str | Path, records: list[FrameRecord]) -> None:
    rows = []
    for rec in records:
        row = {
            "frame_id": rec.frame_id,
            "sweep_id": rec.sweep_id,
            "sweep_direction": rec.sweep_direction,
            "joint_theta_rad": rec.joint_theta_rad,
            "joint_t_m": rec.joint_t_m,
        }
        row.update(zip(POSE_COLUMNS, rec.pose.row_major()))
        rows.append(row)
    pd.DataFrame(rows, columns=FRAME_COLUMNS).to_csv(Path(directory) / FRAMES_CSV, index=False)


def read_frames_csv(directory: str | Path) -> list[FrameRecord]:
    path = Path(directory) / FRAMES_CSV
    if not path.is_file():
        raise FileNotFoundError(f"File does not exist: {path}")
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in FRAME_COLUMNS if c not in df.columns]
    if missing:
        raise FileFormatError(f"{path}: missing columns {missing}")
    records = []
    for row in df.itertuples(index=False):
        values = row._asdict()
        matrix = np.array([values[c] for c in POSE_COLUMNS], dtype=np.float64).reshape(3, 4)
        records.append(FrameRecord(
            frame_id=int(values["frame_id"]),
            sweep_id=int(values["sweep_id"]),
            sweep_direction=str(values["sweep_direction"]),
            joint_theta_rad=float(values["joint_theta_rad"]),
            joint_t_m=float(values["joint_t_m"]),
            pose=Pose(matrix[:, :3], matrix[:, 3]),
        ))
    return records


# ---------------------------------------------------------------- PLY / PGM

def write_ply(path: str | Path, vertices: np.ndarray, faces: np.ndarray | None = None) -> None:
    """Write an ASCII PLY mesh (or a bare point cloud when `faces` is None)."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(vertices)}",
             "property double x", "property double y", "property double z"]
    if faces is not None:
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in vertices.tolist()]
    if faces is not None:
        lines += [f"3 {a} {b} {c}" for a, b, c in np.asarray(faces, dtype=np.int64).tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """
    Read an ASCII PLY file.

    Returns:
        tuple: (vertices (N, 3) float64, faces (M, 3) int64; empty for point clouds).
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"File does not exist: {path}")
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FileFormatError(f"{path}: not a PLY file")
    n_vertices = n_faces = 0
    body_start = None
    for number, line in enumerate(lines):
        parts = line.split()
        if parts[:1] == ["format"] and parts[1] != "ascii":
            raise FileFormatError(f"{path}: only ASCII PLY is supported")
        if parts[:2] == ["element", "vertex"]:
            n_vertices = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_faces = int(parts[2])
        elif parts[:1] == ["end_header"]:
            body_start = number + 1
            break
    if body_start is None:
        raise FileFormatError(f"{path}: PLY header has no end_header")
    body = lines[body_start:]
    if len(body) < n_vertices + n_faces:
        raise FileFormatError(f"{path}: PLY body is truncated")
    vertices = np.array([[float(v) for v in body[i].split()[:3]] for i in range(n_vertices)],
                        dtype=np.float64).reshape(-1, 3)
    faces = []
    for line in body[n_vertices:n_vertices + n_faces]:
        parts = [int(v) for v in line.split()]
        if parts[0] != 3:
            raise FileFormatError(f"{path}: only triangular faces are supported")
        faces.append(parts[1:4])
    return vertices, np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_pgm(path: str | Path, grey: np.ndarray) -> None:
    grey = np.asarray(grey, dtype=np.uint8)
    height, width = grey.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(grey).tobytes())


# ---------------------------------------------------------------- console reports

def print_table(rows: list[dict], columns: list[str], widths: list[int] | None = None) -> None:
    """
    Print a fixed-width table to standard error.

    Args:
        rows (list[dict]): One dict per table row.
        columns (list[str]): Keys to print, in order.
        widths (list[int], optional): Column widths; 14 characters by default.
    """
    widths = widths or [14] * len(columns)
    header = " ".join(f"{c:{w}}" for c, w in zip(columns, widths))
    print(header, file=sys.stderr)
    print("-" * len(header), file=sys.stderr)
    for row in rows:
        cells = []
        for c, w in zip(columns, widths):
            value = row.get(c, "")
            text = f"{value:.4f}" if isinstance(value, float) else str(value)
            cells.append(f"{text:{w}}")
        print(" ".join(cells), file=sys.stderr)
