"""On-disk format round-trips."""
import numpy as np
import pytest

from splatphys.core import Camera, DepthMap, Mask, RigidPose
from splatphys.io import (camera_from_json, camera_to_json, load_camera,
                          load_depth, load_mask, load_pgm, load_ppm,
                          load_splat_ply, pose_from_json, pose_to_json,
                          save_camera, save_depth, save_mask, save_pgm,
                          save_points_ply, save_ppm, save_splat_ply)
from splatphys.synthetic import box_cloud, look_at_pose


def random_cloud(n=50, seed=0):
    rng = np.random.default_rng(seed)
    cloud = box_cloud(np.zeros(3), [0.2, 0.1, 0.3], n_per_axis=4,
                      jitter=0.01, seed=seed)
    return cloud.with_colors(rng.uniform(0, 1, cloud.colors.shape))


def test_splat_ply_roundtrip(tmp_path):
    cloud = random_cloud()
    path = tmp_path / "cloud.ply"
    save_splat_ply(path, cloud)
    back = load_splat_ply(path)
    # storage is float32: exact to single precision
    np.testing.assert_allclose(back.centroids, cloud.centroids, atol=1e-6)
    np.testing.assert_allclose(back.scales, cloud.scales, atol=1e-7)
    np.testing.assert_allclose(back.orientations, cloud.orientations, atol=1e-6)
    np.testing.assert_allclose(back.opacities, cloud.opacities, atol=1e-7)
    np.testing.assert_allclose(back.colors, cloud.colors, atol=1e-7)


def test_splat_ply_save_load_is_idempotent(tmp_path):
    cloud = random_cloud()
    p1 = tmp_path / "a.ply"
    p2 = tmp_path / "b.ply"
    save_splat_ply(p1, cloud)
    save_splat_ply(p2, load_splat_ply(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_splat_ply_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"not a ply at all")
    with pytest.raises(ValueError):
        load_splat_ply(path)


def test_splat_ply_rejects_missing_properties(tmp_path):
    path = tmp_path / "bad.ply"
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
              "property float x\nproperty float y\nproperty float z\n"
              "end_header\n")
    path.write_bytes(header.encode() + np.zeros(3, "<f4").tobytes())
    with pytest.raises(ValueError):
        load_splat_ply(path)


def test_points_ply_with_object_ids(tmp_path):
    from splatphys.pipeline import _load_points_ply
    pts = np.random.default_rng(1).uniform(-1, 1, (20, 3))
    oids = np.repeat([0, 1], 10)
    path = tmp_path / "frame.ply"
    save_points_ply(path, pts, oids)
    back, back_ids = _load_points_ply(str(path))
    np.testing.assert_allclose(back, pts, atol=1e-6)
    np.testing.assert_array_equal(back_ids, oids)


def test_camera_roundtrip(tmp_path):
    cam = Camera(124.8, 124.8, 48.0, 48.0, 96, 96,
                 look_at_pose([0.0, 0.45, -0.9], [0.0, 0.1, 0.0]))
    path = tmp_path / "cam.json"
    save_camera(path, cam)
    back = load_camera(path)
    assert (back.fx, back.fy, back.cx, back.cy) == (cam.fx, cam.fy, cam.cx,
                                                    cam.cy)
    assert (back.width, back.height) == (cam.width, cam.height)
    np.testing.assert_allclose(back.world_to_camera.rotation,
                               cam.world_to_camera.rotation)
    np.testing.assert_allclose(back.world_to_camera.translation,
                               cam.world_to_camera.translation)


def test_camera_json_defaults_identity_pose():
    cam = camera_from_json({"fx": 10, "fy": 10, "cx": 5, "cy": 5,
                            "width": 10, "height": 10})
    np.testing.assert_array_equal(cam.world_to_camera.rotation, [1, 0, 0, 0])


def test_pose_json_roundtrip():
    pose = RigidPose(np.array([0.8, 0.6, 0.0, 0.0]),
                     np.array([0.1, -0.2, 0.3]))
    back = pose_from_json(pose_to_json(pose))
    np.testing.assert_allclose(back.rotation, pose.rotation)
    np.testing.assert_allclose(back.translation, pose.translation)


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(2).uniform(0, 1, (12, 17, 3))
    path = tmp_path / "img.ppm"
    save_ppm(path, img)
    back = load_ppm(path)
    assert back.shape == img.shape
    # 8-bit quantization
    np.testing.assert_allclose(back, img, atol=0.5 / 255)


def test_pgm_roundtrip(tmp_path):
    gray = np.random.default_rng(3).uniform(0, 1, (9, 13))
    path = tmp_path / "img.pgm"
    save_pgm(path, gray)
    back = load_pgm(path)
    np.testing.assert_allclose(back, gray, atol=0.5 / 255)


def test_mask_roundtrip_pgm(tmp_path):
    values = np.random.default_rng(4).random((14, 10)) > 0.5
    path = tmp_path / "mask.pgm"
    save_mask(path, Mask(values))
    back = load_mask(path)
    np.testing.assert_array_equal(back.values, values)


def test_depth_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    values = rng.uniform(0.5, 3.0, (11, 7))
    validity = rng.random((11, 7)) > 0.3
    path = tmp_path / "depth.f32"
    save_depth(path, DepthMap(np.where(validity, values, 1.0), validity))
    back = load_depth(path)
    np.testing.assert_array_equal(back.validity, validity)
    np.testing.assert_allclose(back.values[validity],
                               values[validity].astype(np.float32))


def test_ppm_wrong_magic_errors(tmp_path):
    path = tmp_path / "img.ppm"
    save_pgm(str(path), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        load_ppm(path)
