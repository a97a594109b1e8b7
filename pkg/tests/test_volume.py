import numpy as np
import pytest

from errors import AlignmentError, FileFormatError, InvalidGeometryError
from geometry import FrameRecord, Pose, ScanKinematics, pixel_to_world, rotation_about_axis, sector_points
from labelgen import generate_sequence_labels
from mesh import cylinder
from phantom import ScanPlan, plan_frames
from volume import GridSpec, VolumeGrid, compound, export_nrrd, extract_surface_points, grid_for_frames, read_nrrd


def identity_frame(frame_id=0):
    return FrameRecord(frame_id, 0, "forward", 0.0, 0.0, Pose.identity())


def test_grid_covers_every_sector_point(small_geo):
    frames = [identity_frame(0), FrameRecord(1, 0, "forward", 0.0, 0.01, Pose(np.eye(3), np.array([0, 0.01, 0])))]
    grid = grid_for_frames(frames, small_geo, 0.001)
    for frame in frames:
        index = (sector_points(small_geo, frame.pose).reshape(-1, 3) - grid.origin_m) / 0.001
        assert index.min() >= 0.0
        assert np.all(index <= np.asarray(grid.dims) - 1)
    with pytest.raises(AlignmentError):
        grid_for_frames([], small_geo, 0.001)


def test_single_bin_lands_in_its_voxel(small_geo):
    frame = identity_frame()
    grid = grid_for_frames([frame], small_geo, 0.001)
    values = np.zeros(small_geo.shape)
    values[9, 4] = 1.0
    vol = compound([frame], [values], small_geo, grid)
    assert vol.data.sum() == pytest.approx(1.0)
    world = pixel_to_world(small_geo, frame.pose, 4, 9)
    voxel = np.rint((world - grid.origin_m) / 0.001).astype(int)
    assert vol.data[tuple(voxel)] == 1.0


def test_max_mode_is_idempotent(small_geo, rng):
    frame = identity_frame()
    grid = grid_for_frames([frame], small_geo, 0.001)
    values = rng.random(small_geo.shape)
    once = compound([frame], [values], small_geo, grid)
    twice = compound([frame, frame], [values, values], small_geo, grid)
    np.testing.assert_array_equal(once.data, twice.data)
    assert once.weight is None


@pytest.mark.parametrize("splat", ["nearest", "trilinear"])
def test_mean_mode_averages(small_geo, splat):
    frames = [identity_frame(0), identity_frame(1)]
    grid = grid_for_frames(frames, small_geo, 0.001)
    maps = [np.full(small_geo.shape, 0.4), np.full(small_geo.shape, 0.8)]
    vol = compound(frames, maps, small_geo, grid, mode="mean", splat=splat)
    touched = vol.weight > 0
    assert touched.any()
    np.testing.assert_allclose(vol.data[touched], 0.6, atol=1e-12)
    assert np.all(vol.data[~touched] == 0.0)


def swept_frames(n):
    frames = []
    for i in range(n):
        rotation = rotation_about_axis(np.array([0.0, 1.0, 0.0]), 0.04 * (i - n / 2))
        frames.append(FrameRecord(i, 0, "forward", 0.0, 0.0005 * i, Pose(rotation, np.array([0.0, 0.0005 * i, 0.0]))))
    return frames


@pytest.mark.parametrize("mode", ["max", "mean"])
def test_compounding_ignores_frame_order(small_geo, rng, mode):
    frames = swept_frames(6)
    maps = [rng.random(small_geo.shape) for _ in frames]
    grid = grid_for_frames(frames, small_geo, 0.0008)
    reference = compound(frames, maps, small_geo, grid, mode)
    order = rng.permutation(len(frames))
    shuffled = compound([frames[i] for i in order], [maps[i] for i in order], small_geo, grid, mode)
    if mode == "max":
        np.testing.assert_array_equal(shuffled.data, reference.data)
    else:
        np.testing.assert_allclose(shuffled.data, reference.data, rtol=0.0, atol=1e-12)
        np.testing.assert_allclose(shuffled.weight, reference.weight, rtol=0.0, atol=1e-12)


@pytest.mark.parametrize("mode", ["max", "mean"])
def test_parallel_compounding_matches_sequential(small_geo, rng, mode):
    frames = swept_frames(7)
    maps = [rng.random(small_geo.shape) for _ in frames]
    grid = grid_for_frames(frames, small_geo, 0.0008)
    sequential = compound(frames, maps, small_geo, grid, mode, workers=1)
    for workers in (2, 3, 8):
        parallel = compound(frames, maps, small_geo, grid, mode, workers=workers)
        if mode == "max":
            np.testing.assert_array_equal(parallel.data, sequential.data)
        else:
            np.testing.assert_allclose(parallel.data, sequential.data, rtol=0.0, atol=1e-12)


def test_compound_checks(small_geo):
    frame = identity_frame()
    grid = grid_for_frames([frame], small_geo, 0.001)
    with pytest.raises(AlignmentError):
        compound([frame], [], small_geo, grid)
    with pytest.raises(AlignmentError):
        compound([frame], [np.zeros((4, 4))], small_geo, grid)
    with pytest.raises(ValueError):
        compound([frame], [np.zeros(small_geo.shape)], small_geo, grid, mode="median")
    with pytest.raises(ValueError):
        compound([frame], [np.zeros(small_geo.shape)], small_geo, grid, splat="cubic")


def test_extract_surface_points():
    grid = GridSpec((0.01, 0.02, 0.03), (0.001, 0.001, 0.001), (3, 3, 3))
    data = np.zeros((3, 3, 3))
    data[1, 2, 0] = 0.7
    data[0, 0, 0] = 0.3
    cloud = extract_surface_points(VolumeGrid(grid, data), 0.5)
    np.testing.assert_allclose(cloud.points, [[0.011, 0.022, 0.03]])
    with pytest.raises(ValueError):
        extract_surface_points(VolumeGrid(grid, data), 1.0)


def test_grid_validation():
    with pytest.raises(InvalidGeometryError):
        GridSpec((0, 0, 0), (0.001, 0.0, 0.001), (2, 2, 2))
    with pytest.raises(InvalidGeometryError):
        VolumeGrid(GridSpec((0, 0, 0), (1, 1, 1), (2, 2, 2)), np.zeros((2, 2)))


def test_nrrd_header_and_payload(tmp_path):
    vol = VolumeGrid(GridSpec((0.01, 0.02, 0.03), (0.001, 0.001, 0.001), (2, 2, 2)), np.zeros((2, 2, 2)))
    header, raw = export_nrrd(vol, tmp_path / "volume.nrrd")
    assert raw == tmp_path / "volume.raw"
    assert raw.read_bytes() == bytes(32)
    text = header.read_text(encoding="utf-8")
    assert text.startswith("NRRD0004\n")
    assert "space origin: (0.01,0.02,0.03)" in text
    assert "sizes: 2 2 2" in text
    assert "data file: volume.raw" in text


def test_nrrd_round_trip(tmp_path, rng):
    data = rng.random((4, 3, 2))
    vol = VolumeGrid(GridSpec((-0.02, 0.0, 0.005), (0.0005, 0.001, 0.002), (4, 3, 2)), data)
    export_nrrd(vol, tmp_path / "v.nrrd")
    back = read_nrrd(tmp_path / "v.nrrd")
    assert back.grid == vol.grid
    np.testing.assert_array_equal(back.data, data.astype(np.float32))
    # first axis varies fastest in the payload
    payload = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
    assert payload[1] == np.float32(data[1, 0, 0])


def test_nrrd_rejects_bad_files(tmp_path):
    (tmp_path / "bad.nrrd").write_text("hello\n", encoding="utf-8")
    with pytest.raises(FileFormatError):
        read_nrrd(tmp_path / "bad.nrrd")
    vol = VolumeGrid(GridSpec((0, 0, 0), (1, 1, 1), (2, 2, 2)), np.ones((2, 2, 2)))
    export_nrrd(vol, tmp_path / "short.nrrd")
    (tmp_path / "short.raw").write_bytes(bytes(8))
    with pytest.raises(FileFormatError):
        read_nrrd(tmp_path / "short.nrrd")


def test_cylinder_labels_reconstruct_the_cylinder(geo):
    depth, radius = 0.038, 0.012
    mesh = cylinder(depth, radius, 0.06)
    plan = ScanPlan(n_sweeps=3, sweep_angles_rad=[-0.1, 0.0, 0.1], carriage_range_m=(-0.02, 0.02),
                    frames_per_sweep=13)
    frames = plan_frames(ScanKinematics(), plan)
    labels = generate_sequence_labels(mesh, frames, geo)
    grid = grid_for_frames(frames, geo, 0.001)
    vol = compound(frames, labels, geo, grid, mode="max")
    cloud = extract_surface_points(vol, 0.9)
    assert len(cloud) > 100
    off_surface = np.abs(np.hypot(cloud.points[:, 0], cloud.points[:, 2] - depth) - radius)
    assert np.mean(off_surface <= 0.002) >= 0.9
