"""Depth-based pose initialization and silhouette pose refinement."""
import numpy as np
import pytest

from splatphys.core import (Camera, Mask, Pointmap, RigidPose,
                            quat_from_axis_angle, quat_normalize)
from splatphys.posealign import (AlignConfig, AlignmentError,
                                 initialize_pose, initialize_pose_multiview,
                                 refine_pose)
from splatphys.raster import render_silhouette
from splatphys.synthetic import box_cloud, look_at_pose


def identity_camera(w=16, h=16):
    return Camera(100.0, 100.0, w / 2, h / 2, w, h, RigidPose.identity())


def constant_pointmap(w, h, point):
    points = np.tile(np.asarray(point, dtype=np.float64), (h, w, 1))
    return Pointmap(points, np.ones((h, w), dtype=bool))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def test_initialize_pose_translation_to_point_centroid():
    cam = identity_camera()
    pm = constant_pointmap(16, 16, (0.0, 0.0, 2.0))
    mask = Mask(np.ones((16, 16), dtype=bool))
    cloud = box_cloud(np.zeros(3), [0.1] * 3, n_per_axis=4)
    pose, _ = initialize_pose(cloud, pm, mask, cam)
    np.testing.assert_allclose(pose.translation, [0, 0, 2.0], atol=1e-12)
    np.testing.assert_array_equal(pose.rotation, [1, 0, 0, 0])


def test_initialize_pose_centered_is_identity():
    cam = identity_camera()
    cloud = box_cloud(np.zeros(3), [0.1] * 3, n_per_axis=9, hollow=True)
    # pointmap pixels exactly on the cloud's own surface points
    pts = cloud.centroids[:256].reshape(16, 16, 3)
    pm = Pointmap(pts, np.ones((16, 16), dtype=bool))
    sub = cloud.centroids[:256]
    rms_pts = np.sqrt(np.mean(np.sum((sub - sub.mean(0)) ** 2, axis=1)))
    pose, scale = initialize_pose(cloud, pm, Mask(np.ones((16, 16), bool)), cam)
    np.testing.assert_allclose(pose.translation, sub.mean(axis=0)
                               - cloud.centroids.mean(axis=0), atol=1e-12)
    src = cloud.centroids - cloud.centroids.mean(0)
    rms_cloud = np.sqrt(np.mean(np.sum(src ** 2, axis=1)))
    assert scale == pytest.approx(rms_pts / rms_cloud)


def test_initialize_pose_empty_mask_errors():
    cam = identity_camera()
    pm = constant_pointmap(16, 16, (0.0, 0.0, 2.0))
    cloud = box_cloud(np.zeros(3), [0.1] * 3)
    with pytest.raises(AlignmentError):
        initialize_pose(cloud, pm, Mask(np.zeros((16, 16), bool)), cam)


def test_initialize_pose_respects_camera_frame():
    # camera shifted +1 in world x: camera-frame points map back accordingly
    pose_wc = RigidPose(np.array([1.0, 0, 0, 0]), np.array([-1.0, 0.0, 0.0]))
    cam = Camera(100.0, 100.0, 8.0, 8.0, 16, 16, pose_wc)
    pm = constant_pointmap(16, 16, (0.0, 0.0, 2.0))
    cloud = box_cloud(np.zeros(3), [0.1] * 3)
    pose, _ = initialize_pose(cloud, pm, Mask(np.ones((16, 16), bool)), cam)
    np.testing.assert_allclose(pose.translation, [1.0, 0, 2.0], atol=1e-12)


def test_initialize_pose_multiview_unions_points():
    cam = identity_camera()
    pm1 = constant_pointmap(16, 16, (0.0, 0.0, 1.0))
    pm2 = constant_pointmap(16, 16, (0.0, 0.0, 3.0))
    mask = Mask(np.ones((16, 16), bool))
    cloud = box_cloud(np.zeros(3), [0.1] * 3)
    pose, _ = initialize_pose_multiview(
        cloud, [(pm1, mask, cam), (pm2, mask, cam)])
    np.testing.assert_allclose(pose.translation, [0, 0, 2.0], atol=1e-12)


def test_initialize_pose_multiview_too_few_points_errors():
    cam = identity_camera()
    pm = constant_pointmap(16, 16, (0.0, 0.0, 2.0))
    sparse = np.zeros((16, 16), bool)
    sparse[0, :10] = True
    cloud = box_cloud(np.zeros(3), [0.1] * 3)
    with pytest.raises(AlignmentError):
        initialize_pose_multiview(cloud, [(pm, Mask(sparse), cam)])


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def pose_fixture():
    cloud = box_cloud(np.zeros(3), (0.12, 0.08, 0.1), n_per_axis=7,
                      splat_scale=0.012, opacity=0.995, seed=1)
    f = 1.3 * 192
    cams = [Camera(f, f, 96, 96, 192, 192, look_at_pose(eye, np.zeros(3)))
            for eye in ([0.0, 0.1, -1.0], [1.0, 0.1, 0.0])]
    views = [(c, render_silhouette(cloud, c)) for c in cams]
    return cloud, views


def rotation_error_deg(q):
    return np.rad2deg(2 * np.arccos(min(1.0, abs(q[0]))))


def test_refine_pose_at_truth_stays_put():
    cloud, views = pose_fixture()
    config = AlignConfig(max_iters=20, views=views)
    result = refine_pose(cloud, RigidPose.identity(), config)
    assert result.converged
    assert np.linalg.norm(result.pose.translation) <= 2 * config.fd_epsilon_t
    assert rotation_error_deg(result.pose.rotation) <= np.rad2deg(
        2 * config.fd_epsilon_r)
    trace = result.loss_trace
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


def test_refine_pose_recovers_perturbation():
    cloud, views = pose_fixture()
    axis = np.array([0.3, 1.0, -0.2])
    axis /= np.linalg.norm(axis)
    init = RigidPose(
        quat_normalize(quat_from_axis_angle(axis * np.deg2rad(3.0))),
        np.array([0.03, -0.02, 0.025]))
    result = refine_pose(cloud, init, AlignConfig(views=views))
    assert np.linalg.norm(result.pose.translation) <= 0.005
    assert rotation_error_deg(result.pose.rotation) <= 0.5
    trace = result.loss_trace
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


def test_refine_pose_requires_views():
    cloud, _ = pose_fixture()
    with pytest.raises(ValueError):
        refine_pose(cloud, RigidPose.identity(), AlignConfig(views=[]))


def test_refine_pose_empty_silhouette_errors():
    cloud, views = pose_fixture()
    # move the object far outside every frustum
    init = RigidPose(np.array([1.0, 0, 0, 0]), np.array([0.0, 50.0, 0.0]))
    with pytest.raises(AlignmentError):
        refine_pose(cloud, init, AlignConfig(views=views))


def test_align_config_validation():
    with pytest.raises(ValueError):
        AlignConfig(translation_step=0.0)
    with pytest.raises(ValueError):
        AlignConfig(loss_t="l2")
