"""Synthetic test scenes.

Builders for box-shaped splat clouds, simple cameras, and the shipped
"two boxes on a plane" bundle used by the end-to-end pipeline tests and the
demo scripts. All randomness flows through an explicit seed.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .core import Camera, DepthMap, Mask, RigidPose, SplatCloud, transform_cloud
from .io import (save_camera, save_depth, save_mask, save_ppm, save_splat_ply)
from .raster import render


def look_at_pose(eye, target, up=(0.0, 1.0, 0.0)) -> RigidPose:
    """World-to-camera pose for a camera at `eye` looking at `target`.

    Camera convention: +Z forward, +X right, +Y down (pixel v grows with Y).
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])  # rows: camera axes in world coords
    return RigidPose.from_matrix(r, -r @ eye)


def box_cloud(center, half_extents, n_per_axis=4, splat_scale=0.02,
              color=(0.8, 0.2, 0.2), opacity=0.9, jitter=0.0, seed=0,
              hollow=False):
    """Grid of splats filling an axis-aligned box (surface shell if hollow)."""
    center = np.asarray(center, dtype=np.float64)
    he = np.asarray(half_extents, dtype=np.float64)
    axes = [np.linspace(-h, h, n_per_axis) for h in he]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1) + center
    if hollow:
        idx = np.stack(np.meshgrid(*[np.arange(n_per_axis)] * 3,
                                   indexing="ij"), axis=-1).reshape(-1, 3)
        shell = ((idx == 0) | (idx == n_per_axis - 1)).any(axis=1)
        pts = pts[shell]
    if jitter:
        rng = np.random.default_rng(seed)
        pts = pts + rng.uniform(-jitter, jitter, size=pts.shape)
    n = pts.shape[0]
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return SplatCloud(
        centroids=pts,
        scales=np.full((n, 3), splat_scale),
        orientations=quats,
        opacities=np.full(n, opacity),
        colors=np.tile(np.asarray(color, dtype=np.float64), (n, 1)),
    )


def plane_cloud(y=0.0, half_size=1.0, n_per_axis=20, color=(0.5, 0.5, 0.5),
                splat_scale=None):
    """Flat carpet of surfel-like splats in the y = const plane."""
    xs = np.linspace(-half_size, half_size, n_per_axis)
    gx, gz = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), np.full(gx.size, y), gz.ravel()], axis=1)
    n = pts.shape[0]
    if splat_scale is None:
        splat_scale = 1.2 * (2 * half_size) / n_per_axis
    scales = np.tile([splat_scale, 1e-4, splat_scale], (n, 1))
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return SplatCloud(pts, scales, quats, np.full(n, 0.95),
                      np.tile(np.asarray(color, dtype=np.float64), (n, 1)))


def merge_clouds(*clouds) -> SplatCloud:
    return SplatCloud(
        centroids=np.concatenate([c.centroids for c in clouds]),
        scales=np.concatenate([c.scales for c in clouds]),
        orientations=np.concatenate([c.orientations for c in clouds]),
        opacities=np.concatenate([c.opacities for c in clouds]),
        colors=np.concatenate([c.colors for c in clouds]),
    )


def _plane_depth(camera, y=0.0, half_size=1.0):
    """Per-pixel camera-frame depth of the y = const plane (nan off-plane)."""
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    dirs_cam = np.stack([(us - camera.cx) / camera.fx,
                         (vs - camera.cy) / camera.fy,
                         np.ones_like(us, dtype=np.float64)], axis=-1)
    inv = camera.world_to_camera.inverse()
    rot = inv.rotation_matrix()
    origin = inv.translation
    dirs = dirs_cam @ rot.T
    dy = dirs[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (y - origin[1]) / dy
    hit = origin + t[..., None] * dirs
    ok = (t > 0) & (np.abs(hit[..., 0]) <= half_size) & \
        (np.abs(hit[..., 2]) <= half_size)
    return np.where(ok, t, np.nan)


def make_two_box_bundle(root, seed=0, image_size=96):
    """Write the synthetic "two boxes on a plane" scene bundle to `root`.

    Ground truth: a red and a blue box resting on the y=0 plane, slightly
    interpenetrating, seen from two cameras. Object PLYs are stored centered
    at the origin (as an upstream object generator would emit them); images,
    masks, depth and the relation graph come from the ground-truth layout.
    Returns the bundle JSON path.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(root, exist_ok=True)
    for sub in ("objects", "cameras", "images", "masks", "depth"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    boxes = {
        "box_red": dict(center=np.array([-0.097, 0.1, 0.0]),
                        half=np.array([0.1, 0.1, 0.1]),
                        color=(0.85, 0.15, 0.15)),
        "box_blue": dict(center=np.array([0.097, 0.1, 0.0]),
                         half=np.array([0.1, 0.1, 0.1]),
                         color=(0.15, 0.25, 0.85)),
    }
    gt_poses = {}
    object_clouds = {}
    for name, spec in boxes.items():
        cloud = box_cloud(np.zeros(3), spec["half"], n_per_axis=7,
                          splat_scale=0.024, color=spec["color"],
                          opacity=0.97, jitter=0.002,
                          seed=int(rng.integers(1 << 31)), hollow=True)
        object_clouds[name] = cloud
        gt_poses[name] = RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), spec["center"])
        save_splat_ply(os.path.join(root, "objects", f"{name}.ply"), cloud)

    background = plane_cloud(y=0.0, half_size=0.8, n_per_axis=24)
    save_splat_ply(os.path.join(root, "background.ply"), background)

    scene = merge_clouds(background,
                         *[transform_cloud(object_clouds[k], gt_poses[k])
                           for k in boxes])

    f = image_size * 1.3
    cams = [
        # opposite sides: the union of backprojected surface points then
        # covers front and back faces, keeping the depth-based scale estimate
        # close to unity
        Camera(f, f, image_size / 2, image_size / 2, image_size, image_size,
               look_at_pose([0.0, 0.45, -0.9], [0.0, 0.1, 0.0])),
        Camera(f, f, image_size / 2, image_size / 2, image_size, image_size,
               look_at_pose([0.0, 0.5, 0.9], [0.0, 0.1, 0.0])),
    ]

    entries = []
    for vi, cam in enumerate(cams):
        out = render(scene, cam)
        cam_path = os.path.join("cameras", f"{vi}.json")
        img_path = os.path.join("images", f"{vi}.ppm")
        depth_path = os.path.join("depth", f"{vi}.f32")
        save_camera(os.path.join(root, cam_path), cam)
        save_ppm(os.path.join(root, img_path), out.color)

        # per-object depth and visibility (centroid blend: the isotropic box
        # splats have no well-defined shortest-axis normal for the unbiased
        # estimator)
        obj_renders = {
            name: render(transform_cloud(object_clouds[name], gt_poses[name]),
                         cam, depth_mode="centroid")
            for name in boxes}

        # clean scene depth, as an ideal depth estimator would produce it:
        # analytic ground-plane intersection overlaid with object depth
        depth_vals = _plane_depth(cam, y=0.0, half_size=0.8)
        validity = np.isfinite(depth_vals)
        depth_vals = np.where(validity, depth_vals, 1.0)
        for r in obj_renders.values():
            closer = r.depth_valid & (~validity | (r.depth < depth_vals))
            depth_vals = np.where(closer, r.depth, depth_vals)
            validity = validity | closer
        save_depth(os.path.join(root, depth_path),
                   DepthMap(depth_vals, validity))

        masks = {}
        for name in boxes:
            obj_out = obj_renders[name]
            vis = obj_out.alpha > 0.5
            # instance mask: drop pixels where another object is in front
            occluded = np.zeros_like(vis)
            for other, r in obj_renders.items():
                if other == name:
                    continue
                occluded |= (r.depth_valid & obj_out.depth_valid
                             & (r.depth < obj_out.depth))
            mask = Mask(vis & ~occluded)
            mask_path = os.path.join("masks", f"{vi}_{name}.pgm")
            save_mask(os.path.join(root, mask_path), mask)
            masks[name] = mask_path
        entries.append({"camera": cam_path, "image": img_path,
                        "depth": depth_path, "masks": masks})

    graph = {
        "objects": list(boxes),
        "planes": [{"n": [0.0, 1.0, 0.0], "d": 0.0}],
        "os_edges": [{"object": k, "plane": 0, "epsilon": 0.005} for k in boxes],
        "oo_edges": [{"pair": ["box_red", "box_blue"], "margin": 0.005}],
    }
    with open(os.path.join(root, "relation_graph.json"), "w") as fobj:
        json.dump(graph, fobj, indent=2)

    sim_config = {
        "grid": {"dims": [48, 48, 48], "cell_size": 0.05,
                 "origin": [-1.2, -0.2, -1.2]},
        "dt": 2e-4,
        "gravity": [0.0, -9.8, 0.0],
        "frames": 24,
        "substeps_per_frame": 300,
        "materials": {k: {"youngs_modulus": 2e4, "poisson_ratio": 0.3,
                          "density": 400.0} for k in boxes},
        "colliders": [{"n": [0.0, 1.0, 0.0], "d": 0.0,
                       "condition": "separating", "friction": 0.2}],
    }
    with open(os.path.join(root, "sim_config.json"), "w") as fobj:
        json.dump(sim_config, fobj, indent=2)

    schedule = {
        "events": [{"kind": "impulse_at_point", "target_object": "box_red",
                    "start_frame": 0, "end_frame": 0,
                    "point": list(boxes["box_red"]["center"]),
                    "radius": 0.5, "delta_v": [0.0, 1.0, 0.0]}],
    }
    with open(os.path.join(root, "force_schedule.json"), "w") as fobj:
        json.dump(schedule, fobj, indent=2)

    bundle = {
        "background": "background.ply",
        "objects": {k: f"objects/{k}.ply" for k in boxes},
        "cameras": entries,
        "relation_graph": "relation_graph.json",
        "sim_config": "sim_config.json",
        "force_schedule": "force_schedule.json",
    }
    bundle_path = os.path.join(root, "bundle.json")
    with open(bundle_path, "w") as fobj:
        json.dump(bundle, fobj, indent=2)
    return bundle_path
