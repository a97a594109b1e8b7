import numpy as np
import pytest

from errors import DegenerateInputError, InvalidGeometryError
from geometry import FrameRecord, Pose, rotation_about_axis
from labelgen import (cast_scanlines, generate_frame_label, generate_sequence_labels, hit_bins, icp_register,
                      kabsch, splat_gaussians)
from mesh import BVH, PointCloud, box, flat_plate


def random_pose(rng, max_angle, max_shift):
    axis = rng.normal(size=3)
    rotation = rotation_about_axis(axis / np.linalg.norm(axis), rng.uniform(-max_angle, max_angle))
    return Pose(rotation, rng.uniform(-max_shift, max_shift, size=3))


def rotation_error_rad(pose):
    return float(np.arccos(np.clip((np.trace(pose.rotation) - 1.0) / 2.0, -1.0, 1.0)))


@pytest.fixture
def asymmetric_box():
    return box((0.04, 0.026, 0.016))


def test_kabsch_recovers_transform(rng):
    points = rng.normal(size=(50, 3))
    pose = random_pose(rng, 1.0, 0.5)
    found = kabsch(points, pose.apply(points))
    np.testing.assert_allclose(found.as_matrix(), pose.as_matrix(), atol=1e-10)


def test_icp_identity(rng, asymmetric_box):
    cloud = asymmetric_box.sample_surface(200, rng)
    result = icp_register(cloud, asymmetric_box)
    np.testing.assert_allclose(result.transform.as_matrix(), np.eye(4), atol=1e-9)
    assert result.rmse_m < 1e-9
    assert result.converged


def test_icp_recovers_small_misalignment(rng, asymmetric_box):
    bvh = BVH(asymmetric_box)
    cloud = asymmetric_box.sample_surface(300, rng)
    for _ in range(5):
        offset = random_pose(rng, np.radians(10.0), 0.003)
        result = icp_register(cloud.transformed(offset), bvh, max_iter=300, tol=1e-14)
        residual = result.transform.compose(offset)
        assert rotation_error_rad(residual) < np.radians(0.1)
        assert np.linalg.norm(residual.translation) < 1e-4
        assert result.rmse_m < 1e-6


def test_icp_history_is_non_increasing(rng, asymmetric_box):
    cloud = asymmetric_box.sample_surface(150, rng).transformed(random_pose(rng, np.radians(15.0), 0.004))
    result = icp_register(cloud, asymmetric_box, max_iter=50)
    history = np.array(result.history)
    assert 1 <= len(history) <= result.iterations + 1
    assert np.all(np.diff(history) <= 0.0)
    assert result.rmse_m == history[-1]


def test_icp_with_noise(rng, asymmetric_box):
    clean = asymmetric_box.sample_surface(500, rng)
    offset = random_pose(rng, np.radians(5.0), 0.002)
    noisy = PointCloud(clean.points + rng.normal(scale=0.0002, size=clean.points.shape)).transformed(offset)
    result = icp_register(noisy, asymmetric_box, max_iter=300, tol=1e-14)
    assert 0.0001 <= result.rmse_m <= 0.0004
    assert rotation_error_rad(result.transform.compose(offset)) < np.radians(1.0)


def test_icp_commutes_with_rigid_motion(rng, asymmetric_box):
    cloud = asymmetric_box.sample_surface(300, rng).transformed(random_pose(rng, np.radians(8.0), 0.002))
    motion = random_pose(rng, 1.0, 0.05)
    plain = icp_register(cloud, asymmetric_box, max_iter=200, tol=1e-14)
    moved = icp_register(cloud.transformed(motion), asymmetric_box.transformed(motion), max_iter=200, tol=1e-14)
    expected = motion.compose(plain.transform).compose(motion.inverse())
    np.testing.assert_allclose(moved.transform.as_matrix(), expected.as_matrix(), atol=1e-6)
    assert moved.rmse_m == pytest.approx(plain.rmse_m, abs=1e-6)


@pytest.mark.slow
def test_icp_large_misalignments():
    rng = np.random.default_rng(5)
    mesh = box((0.04, 0.026, 0.016)).merged(box((0.01, 0.01, 0.01), (0.015, 0.008, 0.013)))
    bvh = BVH(mesh)
    cloud = mesh.sample_surface(400, rng)
    for _ in range(50):
        offset = random_pose(rng, np.radians(20.0), 0.01)
        result = icp_register(cloud.transformed(offset), bvh, max_iter=500, tol=1e-14)
        residual = result.transform.compose(offset)
        assert rotation_error_rad(residual) < np.radians(0.1)
        assert np.linalg.norm(residual.translation) < 1e-4


def test_icp_rejects_degenerate_sources(asymmetric_box):
    with pytest.raises(DegenerateInputError):
        icp_register(PointCloud(np.zeros((2, 3))), asymmetric_box)
    line = np.outer(np.linspace(0.0, 0.01, 10), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInputError):
        icp_register(PointCloud(line), asymmetric_box)


def test_splat_gaussians_values():
    label = splat_gaussians((20, 20), np.array([10]), np.array([10]), 2.0)
    assert label[10, 10] == 1.0
    assert label[12, 10] == pytest.approx(np.exp(-0.5))
    assert label[10, 8] == pytest.approx(np.exp(-0.5))
    assert label[0, 10] == 0.0  # beyond 4 sigma
    with pytest.raises(ValueError):
        splat_gaussians((4, 4), np.array([1]), np.array([1]), 0.0)


def test_overlapping_hits_add_before_scaling():
    label = splat_gaussians((20, 20), np.array([10, 10]), np.array([9, 10]), 2.0)
    g = np.exp(-np.arange(5) ** 2 / 8.0)
    assert label.max() == 1.0
    assert label[10, 9] == pytest.approx(1.0) and label[10, 10] == pytest.approx(1.0)
    # two neighbouring Gaussians summed, then scaled by the sum at a hit
    assert label[10, 12] == pytest.approx((g[2] + g[3]) / (g[0] + g[1]))
    assert label[12, 10] == pytest.approx(g[2])
    assert label.min() >= 0.0


def test_perpendicular_plate_label(geo):
    depth = 0.035
    label = generate_frame_label(flat_plate(depth, 0.05, 0.05), Pose.identity(), geo, 2.0, np.pi / 2)
    assert label.shape == geo.shape
    assert label.min() >= 0.0 and label.max() == 1.0
    expected = np.rint((depth / np.cos(geo.ray_angles) - geo.depth_min_m) / geo.depth_step)
    assert np.all(np.abs(label.argmax(axis=0) - expected) <= 1)
    centre = np.argmin(np.abs(geo.ray_angles))
    assert abs(label[:, centre].argmax() - round((depth - geo.depth_min_m) / geo.depth_step)) <= 1


def test_mesh_behind_transducer_gives_empty_label(geo):
    label = generate_frame_label(flat_plate(-0.03, 0.05, 0.05), Pose.identity(), geo)
    assert np.all(label == 0.0)


def test_occluded_surface_is_not_labelled(geo):
    near = flat_plate(0.02, 0.05, 0.05)
    far = flat_plate(0.05, 0.08, 0.08)
    label = generate_frame_label(near.merged(far), Pose.identity(), geo, 2.0, np.pi / 2)
    near_last = int(np.rint((0.02 / np.cos(0.5) - geo.depth_min_m) / geo.depth_step))
    assert np.all(label[near_last + 9:] == 0.0)


def test_incidence_gate(geo):
    hits = cast_scanlines(flat_plate(0.035, 0.05, 0.05), Pose.identity(), geo)
    np.testing.assert_allclose(hits.cos_incidence, np.cos(geo.ray_angles), atol=1e-12)
    _, all_rays = hit_bins(hits, geo, np.pi / 2)
    _, gated = hit_bins(hits, geo, 0.3)
    assert len(all_rays) == geo.n_rays
    np.testing.assert_array_equal(gated, np.flatnonzero(np.abs(geo.ray_angles) <= 0.3 + 1e-12))
    with pytest.raises(InvalidGeometryError):
        generate_frame_label(flat_plate(0.035, 0.05, 0.05), Pose.identity(), geo, 2.0, 2.0)


def test_sequence_labels(geo):
    mesh = flat_plate(0.035, 0.05, 0.05)
    frames = [FrameRecord(i, 0, "forward", 0.0, 0.001 * i, Pose(np.eye(3), np.array([0.0, 0.001 * i, 0.0])))
              for i in range(3)]
    labels = generate_sequence_labels(mesh, frames, geo, workers=2)
    assert len(labels) == 3
    for frame, label in zip(frames, labels):
        np.testing.assert_array_equal(label, generate_frame_label(mesh, frame.pose, geo))
    with pytest.raises(DegenerateInputError):
        generate_sequence_labels(mesh, [], geo)
