"""Mask-based appearance distillation.

Refines object splat colors (geometry and opacity frozen) inside the overlap
of the ground-truth mask and the rendered object mask. The objective is a
photometric substitute for feature-based patch supervision: pixel L2 plus
patch mean/variance matching. Color enters the blend linearly, so the
per-splat gradient is the blending weight alpha_i * prod(1 - alpha_j) at each
pixel; no autodiff needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Camera, Mask, RigidPose, SplatCloud, transform_cloud
from .raster import (ALPHA_THRESHOLD, CUTOFF_SIGMAS, COV_DILATION, NEAR_Z,
                     TRANSMITTANCE_EPS, _camera_frame, _projection_jacobian,
                     _sort_order, render)


@dataclass
class DistillConfig:
    iters: int = 300
    learning_rate: float = 0.05
    patch_size: int = 8
    weight_pixel: float = 1.0
    weight_patch_stats: float = 0.5
    views: list = field(default_factory=list)  # [(Camera, gt image, gt Mask)]

    def __post_init__(self):
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.weight_pixel < 0 or self.weight_patch_stats < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class DistillResult:
    cloud: SplatCloud
    loss_trace: list
    empty_overlap: bool  # True when no view had any overlap; input unchanged


def overlap_region(gt_mask: Mask, rendered_alpha) -> Mask:
    """Pixels inside both the ground-truth and the rendered object mask."""
    alpha = np.asarray(rendered_alpha, dtype=np.float64)
    if alpha.shape != gt_mask.values.shape:
        raise ValueError("mask and alpha buffer dimensions differ")
    return Mask(gt_mask.values & (alpha > ALPHA_THRESHOLD))


def _splat_pixel_weights(cloud, camera):
    """Per-splat blending weight maps: [(splat index, region, weights)].

    Weights are alpha_i * prod_{j<i} (1 - alpha_j) per pixel, identical to the
    forward blend in raster.render.
    """
    h, w = camera.height, camera.width
    trans = np.ones((h, w))
    out = []
    if len(cloud) == 0:
        return out
    centers, rots = _camera_frame(cloud, camera)
    z = centers[:, 2]
    front = z > NEAR_Z
    u0 = camera.fx * centers[:, 0] / np.where(front, z, 1.0) + camera.cx
    v0 = camera.fy * centers[:, 1] / np.where(front, z, 1.0) + camera.cy
    order = _sort_order(cloud, z, np.stack([u0, v0], axis=1))
    order = order[front[order]]
    scales2 = cloud.scales ** 2
    for i in order:
        j = _projection_jacobian(camera, centers[i])
        cov = j @ (rots[i] @ np.diag(scales2[i]) @ rots[i].T) @ j.T
        cov = cov + COV_DILATION * np.eye(2)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
        if det <= 0:
            continue
        rx = CUTOFF_SIGMAS * np.sqrt(cov[0, 0])
        ry = CUTOFF_SIGMAS * np.sqrt(cov[1, 1])
        umin = max(int(np.ceil(u0[i] - rx)), 0)
        umax = min(int(np.floor(u0[i] + rx)), w - 1)
        vmin = max(int(np.ceil(v0[i] - ry)), 0)
        vmax = min(int(np.floor(v0[i] + ry)), h - 1)
        if umin > umax or vmin > vmax:
            continue
        du = np.arange(umin, umax + 1) - u0[i]
        dv = np.arange(vmin, vmax + 1) - v0[i]
        q = (cov[1, 1] * du[None, :] ** 2
             - 2 * cov[0, 1] * dv[:, None] * du[None, :]
             + cov[0, 0] * dv[:, None] ** 2) / det
        g = np.exp(-0.5 * q)
        a_eff = np.clip(cloud.opacities[i] * g, 0.0, 1.0)
        region = (slice(vmin, vmax + 1), slice(umin, umax + 1))
        t_region = trans[region]
        active = (t_region >= TRANSMITTANCE_EPS) & (q <= CUTOFF_SIGMAS ** 2)
        wgt = np.where(active, t_region * a_eff, 0.0)
        out.append((int(i), region, wgt))
        trans[region] = t_region * (1.0 - np.where(active, a_eff, 0.0))
    return out


def _patch_stats_residual(rendered, gt, overlap, patch: int, weight: float):
    """Pixel-space gradient of the patch mean/variance mismatch.

    Patches are non-overlapping patch x patch tiles; only tiles whose center
    pixel lies in the overlap contribute. Returns (loss, dL/d rendered).
    """
    h, w = overlap.shape
    grad = np.zeros_like(rendered)
    loss = 0.0
    half = patch // 2
    for r0 in range(0, h - patch + 1, patch):
        for c0 in range(0, w - patch + 1, patch):
            if not overlap[r0 + half, c0 + half]:
                continue
            tile = (slice(r0, r0 + patch), slice(c0, c0 + patch))
            pr = rendered[tile]
            pg = gt[tile]
            n = pr[..., 0].size
            for ch in range(3):
                mr, mg = pr[..., ch].mean(), pg[..., ch].mean()
                vr, vg = pr[..., ch].var(), pg[..., ch].var()
                loss += weight * ((mr - mg) ** 2 + (vr - vg) ** 2)
                grad[tile + (ch,)] += weight * (
                    2.0 * (mr - mg) / n
                    + 2.0 * (vr - vg) * 2.0 * (pr[..., ch] - mr) / n)
    return loss, grad


def distill_colors(obj: SplatCloud, pose: RigidPose,
                   config: DistillConfig) -> DistillResult:
    """Gradient descent on splat colors against masked photometric targets.

    Splats with zero accumulated blending weight inside the overlap across all
    views are returned bit-identical; output colors are clamped to [0, 1].
    """
    if not config.views:
        raise ValueError("DistillConfig.views must contain at least one view")
    posed = transform_cloud(obj, pose)
    n = len(obj)

    # geometry is frozen: blending weights per view are fixed, compute once
    view_data = []
    any_overlap = False
    for camera, gt_image, gt_mask in config.views:
        out = render(posed, camera, depth_mode="centroid")
        overlap = overlap_region(gt_mask, out.alpha).values
        if overlap.any():
            any_overlap = True
        weights = _splat_pixel_weights(posed, camera)
        view_data.append((camera, np.asarray(gt_image, dtype=np.float64),
                          overlap, weights))
    if not any_overlap:
        return DistillResult(obj, [], empty_overlap=True)

    colors = obj.colors.copy()
    trace = []
    best_colors = colors.copy()
    best_loss = np.inf
    for _ in range(config.iters):
        grad = np.zeros((n, 3))
        wsum = np.zeros(n)
        loss = 0.0
        for camera, gt_image, overlap, weights in view_data:
            h, w = camera.height, camera.width
            rendered = np.zeros((h, w, 3))
            for i, region, wgt in weights:
                rendered[region] += wgt[:, :, None] * colors[i]
            residual = np.zeros_like(rendered)
            if config.weight_pixel > 0:
                diff = (rendered - gt_image) * overlap[:, :, None]
                loss += config.weight_pixel * float(np.sum(diff ** 2))
                residual += config.weight_pixel * 2.0 * diff
            if config.weight_patch_stats > 0:
                pl, pg = _patch_stats_residual(
                    rendered, gt_image, overlap, config.patch_size,
                    config.weight_patch_stats)
                loss += pl
                residual += pg
            for i, region, wgt in weights:
                grad[i] += np.einsum("hw,hwc->c", wgt, residual[region])
                wsum[i] += float(np.sum(wgt * overlap[region]))
        trace.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_colors = colors.copy()
        touched = wsum > 0
        stepped = colors.copy()
        stepped[touched] -= (config.learning_rate
                             * grad[touched] / wsum[touched, None])
        stepped = np.clip(stepped, 0.0, 1.0)
        stepped[~touched] = obj.colors[~touched]
        colors = stepped

    # keep the best iterate so the reported trace end is the returned state
    final = best_colors
    touched = wsum > 0
    final[~touched] = obj.colors[~touched]
    result_cloud = obj.with_colors(final)
    return DistillResult(result_cloud, trace, empty_overlap=False)
