"""Software rasterizer: blending, screen covariance, silhouettes, depth."""
import numpy as np
import pytest

from splatphys.core import Camera, RigidPose, SplatCloud, quat_from_axis_angle
from splatphys.raster import (project_covariance, render, render_depth_unbiased,
                              render_silhouette)
from splatphys.synthetic import look_at_pose, plane_cloud


def make_camera(size=100, f=100.0, pose=None):
    return Camera(f, f, size / 2, size / 2, size, size,
                  pose or RigidPose.identity())


def single_splat(center=(0.0, 0.0, 2.0), scales=(0.3, 0.3, 1e-4),
                 quat=(1.0, 0.0, 0.0, 0.0), opacity=1.0,
                 color=(0.2, 0.4, 0.9)):
    return SplatCloud(np.array([center]), np.array([scales]),
                      np.array([quat], dtype=np.float64), np.array([opacity]),
                      np.array([color]))


class TestProjection:
    def test_screen_covariance_scales_inverse_depth(self):
        # isotropic splat at Z=2, f=100: sigma_px = f*s/z; variance = (f*s/z)^2
        s = 0.1
        cloud = single_splat(scales=(s, s, s))
        cov = project_covariance(cloud, 0, make_camera())
        expected = (100.0 * s / 2.0) ** 2 + 0.3  # + dilation
        np.testing.assert_allclose(np.diag(cov), expected, rtol=1e-12)
        assert abs(cov[0, 1]) < 1e-12

    def test_behind_camera_raises(self):
        cloud = single_splat(center=(0.0, 0.0, -1.0))
        with pytest.raises(ValueError):
            project_covariance(cloud, 0, make_camera())


class TestBlending:
    def test_opaque_splat_center_color(self):
        out = render(single_splat(), make_camera())
        np.testing.assert_allclose(out.color[50, 50], [0.2, 0.4, 0.9],
                                   atol=1e-12)
        assert out.alpha[50, 50] == pytest.approx(1.0, abs=1e-12)

    def test_two_splat_half_blend(self):
        # front red at alpha 0.5 over opaque blue: C = 0.5 red + 0.5 blue
        cloud = SplatCloud(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]]),
                           np.tile([[0.5, 0.5, 1e-4]], (2, 1)),
                           np.tile([[1.0, 0.0, 0.0, 0.0]], (2, 1)),
                           np.array([0.5, 1.0]),
                           np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
        out = render(cloud, make_camera())
        np.testing.assert_allclose(out.color[50, 50], [0.5, 0.0, 0.5],
                                   atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        n = 30
        cloud = SplatCloud(
            rng.uniform(-0.3, 0.3, (n, 3)) + [0, 0, 2.0],
            rng.uniform(0.02, 0.1, (n, 3)),
            np.tile([[1.0, 0.0, 0.0, 0.0]], (n, 1)),
            rng.uniform(0.2, 1.0, n), rng.uniform(0, 1, (n, 3)))
        perm = rng.permutation(n)
        shuffled = SplatCloud(cloud.centroids[perm], cloud.scales[perm],
                              cloud.orientations[perm], cloud.opacities[perm],
                              cloud.colors[perm])
        a = render(cloud, make_camera())
        b = render(shuffled, make_camera())
        assert np.array_equal(a.color, b.color)
        assert np.array_equal(a.depth, b.depth)

    def test_empty_cloud_black(self):
        cloud = SplatCloud(np.zeros((0, 3)), np.zeros((0, 3)),
                           np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))
        out = render(cloud, make_camera())
        assert out.color.max() == 0.0
        assert out.alpha.max() == 0.0

    def test_splats_behind_camera_ignored(self):
        out = render(single_splat(center=(0.0, 0.0, -2.0)), make_camera())
        assert out.alpha.max() == 0.0

    def test_silhouette_matches_render_alpha(self):
        rng = np.random.default_rng(1)
        n = 20
        cloud = SplatCloud(
            rng.uniform(-0.3, 0.3, (n, 3)) + [0, 0, 2.0],
            rng.uniform(0.02, 0.1, (n, 3)),
            np.tile([[1.0, 0.0, 0.0, 0.0]], (n, 1)),
            rng.uniform(0.2, 1.0, n), rng.uniform(0, 1, (n, 3)))
        cam = make_camera()
        sil = render_silhouette(cloud, cam)
        out = render(cloud, cam)
        np.testing.assert_allclose(sil, out.alpha, atol=1e-12)


class TestDepth:
    def test_frontoparallel_plane_depth_exact(self):
        # surfel plane at Z=2 facing the camera: ray/plane depth == 2 at
        # every covered pixel regardless of ray angle
        cloud = single_splat(scales=(0.5, 0.5, 1e-4))
        depth, valid = render_depth_unbiased(cloud, make_camera())
        assert valid[50, 50]
        covered = valid
        np.testing.assert_allclose(depth[covered], 2.0, rtol=1e-12)

    def test_depth_only_valid_above_alpha_threshold(self):
        cloud = single_splat(opacity=0.3)  # alpha never exceeds 0.5
        _, valid = render_depth_unbiased(cloud, make_camera())
        assert not valid.any()

    def test_tilted_plane_matches_ray_intersection(self):
        # plane tilted 30 deg about x through (0,0,2); normal in camera frame
        angle = np.deg2rad(30.0)
        q = quat_from_axis_angle(np.array([angle, 0.0, 0.0]))
        cloud = single_splat(scales=(0.6, 0.6, 1e-4), quat=tuple(q))
        cam = make_camera()
        depth, valid = render_depth_unbiased(cloud, cam)
        assert valid.sum() > 100
        n = np.array([0.0, -np.sin(angle), np.cos(angle)])
        mu = np.array([0.0, 0.0, 2.0])
        vs, us = np.nonzero(valid)
        rays = np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy,
                         np.ones(us.size)], axis=1)
        analytic = (mu @ n) / (rays @ n)
        np.testing.assert_allclose(depth[valid], analytic, rtol=1e-5)

    def test_centroid_depth_biased_off_axis(self):
        # the centroid estimator reports constant Z for a tilted plane, so it
        # must disagree with the ray intersection away from the center
        angle = np.deg2rad(30.0)
        q = quat_from_axis_angle(np.array([angle, 0.0, 0.0]))
        cloud = single_splat(scales=(0.6, 0.6, 1e-4), quat=tuple(q))
        cam = make_camera()
        unb = render(cloud, cam, depth_mode="unbiased")
        cen = render(cloud, cam, depth_mode="centroid")
        both = unb.depth_valid & cen.depth_valid
        assert both.sum() > 100
        diff = np.abs(unb.depth[both] - cen.depth[both])
        assert diff.max() > 0.01

    def test_unknown_depth_mode_rejected(self):
        with pytest.raises(ValueError):
            render(single_splat(), make_camera(), depth_mode="median")


class TestWorldCamera:
    def test_look_at_camera_sees_origin_object(self):
        pose = look_at_pose(np.array([0.0, 0.0, -3.0]), np.zeros(3))
        cam = make_camera(pose=pose)
        cloud = single_splat(center=(0.0, 0.0, 0.0), scales=(0.2, 0.2, 0.2))
        out = render(cloud, cam)
        assert out.alpha[50, 50] > 0.9

    def test_ground_plane_renders(self):
        pose = look_at_pose(np.array([0.0, 1.0, -2.0]), np.zeros(3))
        cam = make_camera(pose=pose)
        cloud = plane_cloud(y=0.0, half_size=1.0, n_per_axis=15)
        out = render(cloud, cam)
        assert out.alpha.max() > 0.5
