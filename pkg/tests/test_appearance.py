"""Masked color distillation."""
import numpy as np
import pytest

from splatphys.appearance import (DistillConfig, distill_colors,
                                  overlap_region)
from splatphys.core import Camera, Mask, RigidPose, SplatCloud
from splatphys.raster import render
from splatphys.synthetic import box_cloud, look_at_pose


def single_splat(color, scale=0.5, opacity=0.999):
    return SplatCloud(
        centroids=np.array([[0.0, 0.0, 2.0]]),
        scales=np.full((1, 3), scale),
        orientations=np.array([[1.0, 0.0, 0.0, 0.0]]),
        opacities=np.array([opacity]),
        colors=np.asarray([color], dtype=np.float64),
    )


def front_camera(w=32, h=32, f=40.0):
    return Camera(f, f, w / 2, h / 2, w, h, RigidPose.identity())


# ---------------------------------------------------------------------------
# overlap region
# ---------------------------------------------------------------------------

def test_overlap_identical_full_masks():
    m = Mask(np.ones((8, 8), bool))
    alpha = np.ones((8, 8))
    assert overlap_region(m, alpha).values.all()


def test_overlap_disjoint_masks():
    gt = np.zeros((8, 8), bool)
    gt[:, :4] = True
    alpha = np.zeros((8, 8))
    alpha[:, 4:] = 1.0
    assert not overlap_region(Mask(gt), alpha).values.any()


def test_overlap_shared_column_only():
    gt = np.zeros((8, 8), bool)
    gt[:, :5] = True  # left half plus the shared column 4
    alpha = np.zeros((8, 8))
    alpha[:, 4:] = 1.0  # right half plus the shared column 4
    out = overlap_region(Mask(gt), alpha).values
    expected = np.zeros((8, 8), bool)
    expected[:, 4] = True
    np.testing.assert_array_equal(out, expected)


def test_overlap_dimension_mismatch_errors():
    with pytest.raises(ValueError):
        overlap_region(Mask(np.ones((8, 8), bool)), np.ones((4, 4)))


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------

def test_distill_zero_gradient_when_gt_matches():
    cloud = single_splat([0.3, 0.6, 0.9])
    cam = front_camera()
    out = render(cloud, cam)
    mask = Mask(out.alpha > 0.5)
    config = DistillConfig(iters=20, views=[(cam, out.color, mask)])
    result = distill_colors(cloud, RigidPose.identity(), config)
    np.testing.assert_allclose(result.cloud.colors, cloud.colors, atol=1e-9)


def test_distill_single_splat_converges_to_gray():
    # splat far larger than the frustum: blending weight ~1 over the overlap
    cloud = single_splat([0.9, 0.9, 0.9], scale=50.0, opacity=0.9999)
    cam = front_camera()
    out = render(cloud, cam)
    mask = Mask(out.alpha > 0.5)
    assert mask.values.all()
    gt = np.full((32, 32, 3), 0.5)
    config = DistillConfig(iters=300, weight_patch_stats=0.0,
                           views=[(cam, gt, mask)])
    result = distill_colors(cloud, RigidPose.identity(), config)
    np.testing.assert_allclose(result.cloud.colors, 0.5, atol=1e-3)


def test_distill_zero_support_splats_bit_unchanged():
    # two splats: one visible, one far outside every view
    cloud = SplatCloud(
        centroids=np.array([[0.0, 0.0, 2.0], [50.0, 0.0, 2.0]]),
        scales=np.full((2, 3), 0.5),
        orientations=np.tile([1.0, 0, 0, 0], (2, 1)),
        opacities=np.array([0.999, 0.999]),
        colors=np.array([[0.9, 0.1, 0.1], [0.123456789, 0.5, 0.25]]),
    )
    cam = front_camera()
    out = render(cloud, cam)
    mask = Mask(out.alpha > 0.5)
    gt = np.full((32, 32, 3), 0.5)
    config = DistillConfig(iters=50, views=[(cam, gt, mask)])
    result = distill_colors(cloud, RigidPose.identity(), config)
    np.testing.assert_array_equal(result.cloud.colors[1], cloud.colors[1])
    assert not np.allclose(result.cloud.colors[0], cloud.colors[0])


def test_distill_empty_overlap_returns_input():
    cloud = single_splat([0.9, 0.1, 0.1])
    cam = front_camera()
    gt_mask = Mask(np.zeros((32, 32), bool))
    config = DistillConfig(iters=10,
                           views=[(cam, np.zeros((32, 32, 3)), gt_mask)])
    result = distill_colors(cloud, RigidPose.identity(), config)
    assert result.empty_overlap
    np.testing.assert_array_equal(result.cloud.colors, cloud.colors)


def test_distill_colors_clamped():
    cloud = single_splat([0.99, 0.99, 0.99])
    cam = front_camera()
    out = render(cloud, cam)
    mask = Mask(out.alpha > 0.5)
    gt = np.ones((32, 32, 3))  # pushes colors upward toward the clamp
    config = DistillConfig(iters=100, learning_rate=0.5,
                           views=[(cam, gt, mask)])
    result = distill_colors(cloud, RigidPose.identity(), config)
    assert np.all(result.cloud.colors >= 0.0)
    assert np.all(result.cloud.colors <= 1.0)


def test_distill_loss_trace_decreases():
    rng = np.random.default_rng(2)
    truth = box_cloud(np.zeros(3), [0.1] * 3, n_per_axis=5, splat_scale=0.035,
                      color=(0.2, 0.7, 0.3), opacity=0.95, jitter=0.003)
    wrong = truth.with_colors(np.clip(
        truth.colors + rng.uniform(-0.4, 0.4, truth.colors.shape), 0, 1))
    cam = Camera(1.3 * 64, 1.3 * 64, 32, 32, 64, 64,
                 look_at_pose([0, 0.15, -0.8], [0, 0, 0]))
    out = render(truth, cam)
    mask = Mask(out.alpha > 0.5)
    config = DistillConfig(iters=60, views=[(cam, out.color, mask)])
    result = distill_colors(wrong, RigidPose.identity(), config)
    assert min(result.loss_trace) < 0.2 * result.loss_trace[0]


def test_distill_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(patch_size=1)
    with pytest.raises(ValueError):
        DistillConfig(weight_pixel=-1.0)
    with pytest.raises(ValueError):
        distill_colors(single_splat([0.5, 0.5, 0.5]), RigidPose.identity(),
                       DistillConfig(views=[]))
