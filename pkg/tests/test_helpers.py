import numpy as np
import pytest

from errors import FileFormatError
from geometry import FrameRecord, PolarImage, ScanKinematics, pose_from_joints
from helpers import (frame_seed, load_image, map_frames, print_table, read_frames_csv, read_meta, read_pfm, read_ply,
                     read_scan_meta, save_cartesian, save_polar, splitmix64, write_frames_csv, write_meta, write_pfm,
                     write_pgm, write_ply, write_scan_meta)
from scan_conversion import polar_to_cartesian


def test_splitmix64_reference_value():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert frame_seed(7, 3) == 7 ^ splitmix64(3)
    assert frame_seed(7, 3) != frame_seed(7, 4)


def test_map_frames_keeps_order():
    items = list(range(20))
    assert map_frames(lambda v: v * v, items, workers=4) == [v * v for v in items]
    assert map_frames(lambda v: v + 1, [], workers=4) == []


def test_pfm_layout(tmp_path):
    data = np.arange(6, dtype=np.float64).reshape(2, 3) / 7.0
    write_pfm(tmp_path / "a.pfm", data)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    first_stored_row = np.frombuffer(raw[len(b"Pf\n3 2\n-1.0\n"):], dtype="<f4", count=3)
    np.testing.assert_array_equal(first_stored_row, data[1].astype(np.float32))
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), data.astype(np.float32))


def test_pfm_errors(tmp_path):
    with pytest.raises(FileFormatError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))
    (tmp_path / "rgb.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
    with pytest.raises(FileFormatError):
        read_pfm(tmp_path / "rgb.pfm")
    (tmp_path / "short.pfm").write_bytes(b"Pf\n4 4\n-1.0\n" + bytes(8))
    with pytest.raises(FileFormatError):
        read_pfm(tmp_path / "short.pfm")


def test_meta_sidecar(tmp_path):
    write_meta(tmp_path / "a.meta", {"kind": "polar", "origin_m": (0.1, -0.2), "n": 3})
    assert read_meta(tmp_path / "a.meta") == {"kind": "polar", "origin_m": "0.1,-0.2", "n": "3"}
    (tmp_path / "b.meta").write_text("# comment\n\nkey value\n", encoding="utf-8")
    with pytest.raises(FileFormatError):
        read_meta(tmp_path / "b.meta")


def test_images_reload_with_geometry(tmp_path, small_geo, rng):
    polar = PolarImage(small_geo, rng.random(small_geo.shape))
    save_polar(tmp_path / "p.pfm", polar)
    loaded, geo = load_image(tmp_path / "p.pfm")
    assert isinstance(loaded, PolarImage) and geo == small_geo

    cart = polar_to_cartesian(polar, 0.0005)
    save_cartesian(tmp_path / "c.pfm", cart, small_geo)
    loaded, geo = load_image(tmp_path / "c.pfm")
    assert (loaded.width_px, loaded.height_px, loaded.origin_m) == (cart.width_px, cart.height_px, cart.origin_m)
    np.testing.assert_array_equal(loaded.mask, cart.mask)
    np.testing.assert_allclose(loaded.data, cart.data, atol=1e-6)

    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.pfm")
    write_pfm(tmp_path / "orphan.pfm", np.zeros((2, 2)))
    with pytest.raises(FileFormatError):
        load_image(tmp_path / "orphan.pfm")


def test_scan_directory_files(tmp_path, geo):
    kin = ScanKinematics(np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 0.01]), np.array([0.0, 1.0, 0.0]))
    write_scan_meta(tmp_path, geo, kin, 0.001, "cylinder")
    read_geo, read_kin, pixel_size, anatomy = read_scan_meta(tmp_path)
    assert read_geo == geo and pixel_size == 0.001 and anatomy == "cylinder"
    np.testing.assert_array_equal(read_kin.sweep_pivot, kin.sweep_pivot)

    records = [FrameRecord(i, i // 2, "forward" if i < 2 else "backward", 0.1 * i, -0.003 * i,
                           pose_from_joints(kin, 0.1 * i, -0.003 * i)) for i in range(4)]
    write_frames_csv(tmp_path, records)
    back = read_frames_csv(tmp_path)
    assert [(r.frame_id, r.sweep_id, r.sweep_direction) for r in back] == \
        [(r.frame_id, r.sweep_id, r.sweep_direction) for r in records]
    for a, b in zip(records, back):
        np.testing.assert_array_equal(a.pose.as_matrix(), b.pose.as_matrix())
    with pytest.raises(FileNotFoundError):
        read_frames_csv(tmp_path / "nowhere")


def test_ply(tmp_path):
    vertices = np.array([[0.0, 0.0, 0.0], [0.001, 0.0, 0.0], [0.0, 0.002, 1e-7]])
    write_ply(tmp_path / "m.ply", vertices, np.array([[0, 1, 2]]))
    v, f = read_ply(tmp_path / "m.ply")
    np.testing.assert_array_equal(v, vertices)
    np.testing.assert_array_equal(f, [[0, 1, 2]])
    write_ply(tmp_path / "c.ply", vertices)
    v, f = read_ply(tmp_path / "c.ply")
    assert v.shape == (3, 3) and f.shape == (0, 3)
    (tmp_path / "bad.ply").write_text("ply\nformat binary_little_endian 1.0\nend_header\n", encoding="utf-8")
    with pytest.raises(FileFormatError):
        read_ply(tmp_path / "bad.ply")


def test_pgm(tmp_path):
    write_pgm(tmp_path / "g.pgm", np.array([[0, 128, 255]], dtype=np.uint8))
    assert (tmp_path / "g.pgm").read_bytes() == b"P5\n3 1\n255\n\x00\x80\xff"


def test_print_table(capsys):
    print_table([{"name": "exp1", "dice": 0.123456}], ["name", "dice"], [6, 8])
    err = capsys.readouterr().err.splitlines()
    assert err[0].split() == ["name", "dice"]
    assert err[2].split() == ["exp1", "0.1235"]
