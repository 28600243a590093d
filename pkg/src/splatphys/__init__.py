"""splatphys: scene-consistent object restoration and elastic-body physics
for Gaussian-splat scenes.

Library layout:
  core       geometry, cameras, poses, back-projection
  raster     software splat rasterizer (color / silhouette / unbiased depth)
  metrics    SSIM, MS-SSIM, Sobel edge error, masked PSNR/SSIM
  posealign  render-and-compare 6-DoF pose refinement
  physlayout relation-graph contact and non-penetration refinement
  appearance mask-based color distillation
  mpm        MLS-MPM elastic solver
  pipeline   staged on-disk pipeline driver
  cli        command-line front end
"""

__version__ = "0.1.0"

from .core import (Camera, DepthMap, Mask, Pointmap, RigidPose, SplatCloud,
                   backproject, project_point, transform_cloud)
from .raster import RenderOutput, render, render_depth_unbiased, render_silhouette

__all__ = [
    "Camera", "DepthMap", "Mask", "Pointmap", "RigidPose", "SplatCloud",
    "backproject", "project_point", "transform_cloud",
    "RenderOutput", "render", "render_depth_unbiased", "render_silhouette",
    "__version__",
]
