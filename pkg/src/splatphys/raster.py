"""Forward software rasterizer for splat clouds.

Produces alpha-blended color, accumulated-alpha silhouettes, and surfel-style
unbiased depth (ray/plane intersection per splat, alpha-blended). Splats are
blended strictly front-to-back by camera-frame centroid depth; blending stops
once transmittance drops below TRANSMITTANCE_EPS.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import Camera, SplatCloud, quat_to_matrix

ALPHA_THRESHOLD = 0.5       # depth valid only where accumulated alpha exceeds this
TRANSMITTANCE_EPS = 1e-4    # early blending termination
COV_DILATION = 0.3          # px^2 added to the 2D covariance diagonal
CUTOFF_SIGMAS = 3.0         # screen-space Gaussian footprint truncation
GRAZING_EPS = 1e-8          # |ray . splat normal| below this skips depth
NEAR_Z = 1e-6


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray        # (H, W, 3) in [0, 1]
    alpha: np.ndarray        # (H, W) accumulated opacity
    depth: np.ndarray        # (H, W) meters, meaningful only where depth_valid
    depth_valid: np.ndarray  # (H, W) bool


def _camera_frame(cloud: SplatCloud, camera: Camera):
    """Centroids and orientation matrices in the camera frame."""
    pose = camera.world_to_camera
    centers = pose.apply(cloud.centroids)
    rot = pose.rotation_matrix()[None, :, :] @ quat_to_matrix(cloud.orientations)
    return centers, rot


def _sort_order(cloud: SplatCloud, z, xy):
    # Front-to-back by depth; remaining keys make the order (and therefore the
    # output) invariant to permutations of the input splat list.
    keys = (cloud.opacities, cloud.colors[:, 2], cloud.colors[:, 1],
            cloud.colors[:, 0], xy[:, 1], xy[:, 0], z)
    return np.lexsort(keys)


def project_covariance(cloud: SplatCloud, index: int, camera: Camera):
    """Screen-space 2x2 covariance of one splat: J W Sigma W^T J^T + dilation."""
    centers, rot = _camera_frame(cloud, camera)
    c = centers[index]
    if c[2] <= NEAR_Z:
        raise ValueError("splat behind camera")
    r = rot[index]
    cov_cam = r @ np.diag(cloud.scales[index] ** 2) @ r.T
    j = _projection_jacobian(camera, c)
    return j @ cov_cam @ j.T + COV_DILATION * np.eye(2)


def _projection_jacobian(camera: Camera, c):
    x, y, z = c
    return np.array([
        [camera.fx / z, 0.0, -camera.fx * x / z ** 2],
        [0.0, camera.fy / z, -camera.fy * y / z ** 2],
    ])


def _blend(cloud: SplatCloud, camera: Camera, need_color: bool,
           need_depth: bool, depth_mode: str = "unbiased"):
    h, w = camera.height, camera.width
    color = np.zeros((h, w, 3)) if need_color else None
    alpha = np.zeros((h, w))
    trans = np.ones((h, w))
    depth_acc = np.zeros((h, w)) if need_depth else None
    depth_wsum = np.zeros((h, w)) if need_depth else None

    if len(cloud) == 0:
        return color, alpha, depth_acc, depth_wsum

    centers, rots = _camera_frame(cloud, camera)
    z = centers[:, 2]
    front = z > NEAR_Z
    if not front.any():
        return color, alpha, depth_acc, depth_wsum

    u0 = camera.fx * centers[:, 0] / np.where(front, z, 1.0) + camera.cx
    v0 = camera.fy * centers[:, 1] / np.where(front, z, 1.0) + camera.cy
    order = _sort_order(cloud, z, np.stack([u0, v0], axis=1))
    order = order[front[order]]

    if need_depth:
        # per-pixel camera ray directions with dz = 1, so ray-plane depth is Z
        ray_x = (np.arange(w) - camera.cx) / camera.fx
        ray_y = (np.arange(h) - camera.cy) / camera.fy

    scales2 = cloud.scales ** 2
    for i in order:
        j = _projection_jacobian(camera, centers[i])
        cov = j @ (rots[i] @ np.diag(scales2[i]) @ rots[i].T) @ j.T
        cov = cov + COV_DILATION * np.eye(2)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
        if det <= 0:
            continue
        # 3-sigma bounding box from the marginal variances
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
        inv00 = cov[1, 1] / det
        inv11 = cov[0, 0] / det
        inv01 = -cov[0, 1] / det
        q = (inv00 * du[None, :] ** 2 + 2 * inv01 * dv[:, None] * du[None, :]
             + inv11 * dv[:, None] ** 2)
        g = np.exp(-0.5 * q)
        a_eff = np.clip(cloud.opacities[i] * g, 0.0, 1.0)
        region = (slice(vmin, vmax + 1), slice(umin, umax + 1))
        t_region = trans[region]
        active = (t_region >= TRANSMITTANCE_EPS) & (q <= CUTOFF_SIGMAS ** 2)
        if not active.any():
            continue
        wgt = np.where(active, t_region * a_eff, 0.0)
        alpha[region] += wgt
        if need_color:
            color[region] += wgt[:, :, None] * cloud.colors[i]
        if need_depth:
            if depth_mode == "unbiased":
                # splat plane normal = shortest-scale axis, camera frame
                n = rots[i][:, int(np.argmin(cloud.scales[i]))]
                denom = (ray_x[None, umin:umax + 1] * n[0]
                         + ray_y[vmin:vmax + 1, None] * n[1] + n[2])
                mu_dot_n = centers[i] @ n
                ok = np.abs(denom) >= GRAZING_EPS
                d_u = np.where(ok, mu_dot_n / np.where(ok, denom, 1.0), 0.0)
                dw = np.where(ok, wgt, 0.0)
            else:  # centroid depth estimator (view-angle biased)
                d_u = np.full_like(wgt, centers[i][2])
                dw = wgt
            depth_acc[region] += dw * d_u
            depth_wsum[region] += dw
        trans[region] = t_region * (1.0 - np.where(active, a_eff, 0.0))
    return color, alpha, depth_acc, depth_wsum


def render(cloud: SplatCloud, camera: Camera,
           depth_mode: str = "unbiased") -> RenderOutput:
    """Full render: color, accumulated alpha, and alpha-blended depth.

    depth_mode: "unbiased" (ray/plane intersection per splat) or "centroid".
    """
    if depth_mode not in ("unbiased", "centroid"):
        raise ValueError(f"unknown depth mode {depth_mode!r}")
    color, alpha, depth_acc, depth_wsum = _blend(
        cloud, camera, need_color=True, need_depth=True, depth_mode=depth_mode)
    depth_valid = (alpha > ALPHA_THRESHOLD) & (depth_wsum > 0)
    depth = np.where(depth_valid, depth_acc / np.where(depth_wsum > 0, depth_wsum, 1.0), 0.0)
    return RenderOutput(color=color, alpha=np.clip(alpha, 0.0, 1.0),
                        depth=depth, depth_valid=depth_valid)


@njit(cache=True)
def _silhouette_kernel(order, u0, v0, c00, c01, c11, opac, alpha, trans):
    h, w = alpha.shape
    for oi in range(order.shape[0]):
        i = order[oi]
        det = c00[i] * c11[i] - c01[i] * c01[i]
        if det <= 0.0:
            continue
        rx = CUTOFF_SIGMAS * np.sqrt(c00[i])
        ry = CUTOFF_SIGMAS * np.sqrt(c11[i])
        umin = max(int(np.ceil(u0[i] - rx)), 0)
        umax = min(int(np.floor(u0[i] + rx)), w - 1)
        vmin = max(int(np.ceil(v0[i] - ry)), 0)
        vmax = min(int(np.floor(v0[i] + ry)), h - 1)
        if umin > umax or vmin > vmax:
            continue
        inv00 = c11[i] / det
        inv11 = c00[i] / det
        inv01 = -c01[i] / det
        for v in range(vmin, vmax + 1):
            dv = v - v0[i]
            for u in range(umin, umax + 1):
                du = u - u0[i]
                q = inv00 * du * du + 2.0 * inv01 * du * dv + inv11 * dv * dv
                if q > CUTOFF_SIGMAS ** 2:
                    continue
                t = trans[v, u]
                if t < TRANSMITTANCE_EPS:
                    continue
                a = opac[i] * np.exp(-0.5 * q)
                if a > 1.0:
                    a = 1.0
                alpha[v, u] += t * a
                trans[v, u] = t * (1.0 - a)


def _screen_footprints(cloud: SplatCloud, camera: Camera):
    """Vectorized screen setup: projected centers, 2D covariance entries, and
    the blending order, restricted to splats in front of the camera."""
    centers, rots = _camera_frame(cloud, camera)
    z = centers[:, 2]
    front = z > NEAR_Z
    zs = np.where(front, z, 1.0)
    u0 = camera.fx * centers[:, 0] / zs + camera.cx
    v0 = camera.fy * centers[:, 1] / zs + camera.cy
    order = _sort_order(cloud, z, np.stack([u0, v0], axis=1))
    order = order[front[order]]
    cov_cam = rots @ (cloud.scales[:, :, None] ** 2 * rots.transpose(0, 2, 1))
    x, y = centers[:, 0], centers[:, 1]
    j = np.zeros((len(cloud), 2, 3))
    j[:, 0, 0] = camera.fx / zs
    j[:, 0, 2] = -camera.fx * x / zs ** 2
    j[:, 1, 1] = camera.fy / zs
    j[:, 1, 2] = -camera.fy * y / zs ** 2
    cov2d = j @ cov_cam @ j.transpose(0, 2, 1)
    c00 = cov2d[:, 0, 0] + COV_DILATION
    c01 = cov2d[:, 0, 1]
    c11 = cov2d[:, 1, 1] + COV_DILATION
    return order, u0, v0, c00, c01, c11


def render_silhouette(cloud: SplatCloud, camera: Camera) -> np.ndarray:
    """Accumulated-alpha channel only (cheap path for pose alignment)."""
    alpha = np.zeros((camera.height, camera.width))
    if len(cloud) == 0:
        return alpha
    order, u0, v0, c00, c01, c11 = _screen_footprints(cloud, camera)
    trans = np.ones_like(alpha)
    _silhouette_kernel(order, u0, v0, c00, c01, c11,
                       np.ascontiguousarray(cloud.opacities, dtype=np.float64),
                       alpha, trans)
    return np.clip(alpha, 0.0, 1.0)


def render_depth_unbiased(cloud: SplatCloud, camera: Camera):
    """Alpha-blended ray/plane depth. Returns (depth, validity)."""
    out = render(cloud, camera, depth_mode="unbiased")
    return out.depth, out.depth_valid
