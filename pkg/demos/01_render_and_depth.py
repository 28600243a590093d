"""Render a splat scene and compare the two depth estimators.

Builds a tilted planar splat, renders color/alpha/depth, and shows that the
surfel (ray/plane) depth tracks the analytic intersection while the centroid
estimator flattens the tilt.

Run: python demos/01_render_and_depth.py [out_dir]
"""
import os
import sys

import numpy as np

from splatphys.core import Camera, RigidPose, SplatCloud, quat_from_axis_angle
from splatphys.io import save_ppm
from splatphys.raster import render, render_depth_unbiased


def main(out_dir="demo_out"):
    os.makedirs(out_dir, exist_ok=True)
    angle = np.deg2rad(30.0)
    cloud = SplatCloud(
        centroids=np.array([[0.0, 0.0, 2.0]]),
        scales=np.array([[0.6, 0.6, 1e-4]]),
        orientations=np.array([quat_from_axis_angle(np.array([angle, 0, 0]))]),
        opacities=np.array([1.0]),
        colors=np.array([[0.9, 0.6, 0.2]]))
    cam = Camera(100.0, 100.0, 50.0, 50.0, 100, 100, RigidPose.identity())

    out = render(cloud, cam)
    save_ppm(os.path.join(out_dir, "plane.ppm"), out.color)
    print(f"rendered {int(out.alpha.size)} px, "
          f"{int((out.alpha > 0.5).sum())} px above alpha 0.5")

    depth, valid = render_depth_unbiased(cloud, cam)
    centroid = render(cloud, cam, depth_mode="centroid")
    n = np.array([0.0, -np.sin(angle), np.cos(angle)])
    vs, us = np.nonzero(valid)
    rays = np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy,
                     np.ones(us.size)], axis=1)
    analytic = (np.array([0.0, 0.0, 2.0]) @ n) / (rays @ n)
    print("depth error vs analytic ray/plane intersection "
          f"({int(valid.sum())} covered px):")
    print(f"  surfel estimator   max {np.abs(depth[valid] - analytic).max():.2e} m")
    print(f"  centroid estimator max "
          f"{np.abs(centroid.depth[valid] - analytic).max():.2e} m"
          "  <- constant-Z bias on the tilt")
    print(f"outputs in {out_dir}/")


if __name__ == "__main__":
    main(*sys.argv[1:])
