"""Render-and-compare 6-DoF pose refinement.

Alternating translation and rotation sub-steps: each minimizes the summed
silhouette discrepancy (1 - SSIM or 1 - MS-SSIM) against ground-truth masks
across views, with central finite-difference gradients over the 3 translation
components and a 3-vector axis-angle rotation increment. Rotation increments
pivot about the posed object-cloud centroid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (Camera, Mask, Pointmap, RigidPose, SplatCloud,
                   quat_from_axis_angle, quat_multiply, quat_normalize,
                   quat_rotate, transform_cloud)
from .metrics import (MS_SSIM_WEIGHTS, SsimParams, _downsample2,
                      _gaussian_window)
from .raster import render_silhouette

MIN_INIT_POINTS = 50


def _smooth_valid(x, win, r):
    from scipy.ndimage import correlate1d
    y = correlate1d(x, win, axis=0, mode="constant")
    y = correlate1d(y, win, axis=1, mode="constant")
    return y[r:-r, r:-r] if r else y


class _TargetPyramid:
    """Per-view cache of the fixed target's SSIM moments at every MS level.

    The target never changes during a refinement run, so its local means and
    variances (3 of the 5 smoothing passes per SSIM evaluation, at each
    pyramid level) are computed once here.
    """

    def __init__(self, target, params: SsimParams):
        self.params = params
        self.win = _gaussian_window(params.window_size, params.gaussian_sigma)
        self.r = params.window_size // 2
        levels = len(MS_SSIM_WEIGHTS)
        self.ms_fallback = min(target.shape) < params.window_size * 2 ** (levels - 1)
        self.levels = []
        b = np.asarray(target, dtype=np.float64)
        n_levels = 1 if self.ms_fallback else levels
        for _ in range(n_levels):
            mu_b = _smooth_valid(b, self.win, self.r)
            sbb = _smooth_valid(b * b, self.win, self.r) - mu_b * mu_b
            self.levels.append((b, mu_b, sbb))
            b = _downsample2(b)

    def losses(self, sil, need_ssim, need_ms):
        """(1 - ssim, 1 - ms_ssim) against the cached target; unneeded
        entries come back as None."""
        p = self.params
        c1 = (p.k1 * p.dynamic_range) ** 2
        c2 = (p.k2 * p.dynamic_range) ** 2
        out_ssim = None
        out_ms = None
        if self.ms_fallback:
            need_ssim = need_ssim or need_ms
        a = sil
        ms_value = 1.0
        for level, (b, mu_b, sbb) in enumerate(self.levels):
            last = level == len(self.levels) - 1
            mu_a = _smooth_valid(a, self.win, self.r)
            saa = _smooth_valid(a * a, self.win, self.r) - mu_a * mu_a
            sab = _smooth_valid(a * b, self.win, self.r) - mu_a * mu_b
            cs = (2 * sab + c2) / (saa + sbb + c2)
            if level == 0 and need_ssim:
                lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
                out_ssim = 1.0 - float(np.mean(lum * cs))
            if need_ms and not self.ms_fallback:
                if last:
                    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
                    term = float(np.mean(lum * cs))
                else:
                    term = float(np.mean(cs))
                ms_value *= max(term, 0.0) ** MS_SSIM_WEIGHTS[level]
            if not need_ms:
                break
            if not last:
                a = _downsample2(a)
        if need_ms:
            out_ms = (out_ssim if self.ms_fallback else 1.0 - float(ms_value))
        return out_ssim, out_ms


class AlignmentError(RuntimeError):
    pass


@dataclass
class AlignConfig:
    max_iters: int = 200
    translation_step: float = 0.01   # m
    rotation_step: float = 0.01      # rad
    fd_epsilon_t: float = 1e-3       # m
    fd_epsilon_r: float = 1e-3       # rad
    loss_t: str = "ms_ssim"
    loss_r: str = "ssim"
    convergence_tol: float = 1e-5    # on loss change over convergence_window
    convergence_window: int = 10
    max_backtracks: int = 5
    views: list = field(default_factory=list)  # [(Camera, Mask)]

    def __post_init__(self):
        for name in ("translation_step", "rotation_step",
                     "fd_epsilon_t", "fd_epsilon_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("loss_t", "loss_r"):
            if getattr(self, name) not in ("ssim", "ms_ssim"):
                raise ValueError(f"{name} must be 'ssim' or 'ms_ssim'")


@dataclass
class AlignResult:
    pose: RigidPose
    loss_trace: list
    converged: bool
    iters_used: int


def _pose_from_world_points(object_cloud: SplatCloud, pts_world):
    target = pts_world.mean(axis=0)
    source = object_cloud.centroids.mean(axis=0)
    target_rms = float(np.sqrt(np.mean(np.sum((pts_world - target) ** 2, axis=1))))
    source_rms = float(np.sqrt(np.mean(np.sum(
        (object_cloud.centroids - source) ** 2, axis=1))))
    scale = target_rms / source_rms if source_rms > 1e-12 else 1.0
    pose = RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), target - source)
    return pose, scale


def _masked_world_points(pointmap: Pointmap, object_mask: Mask, camera: Camera):
    sel = object_mask.values & pointmap.validity
    return camera.world_to_camera.inverse().apply(pointmap.points[sel])


def initialize_pose(object_cloud: SplatCloud, pointmap: Pointmap,
                    object_mask: Mask, camera: Camera):
    """Translate the object so its centroid hits the masked pointmap centroid.

    Returns (pose, scale): rotation is identity, scale is the isotropic
    correction matching the cloud's RMS radius to that of the masked points.
    """
    pts_world = _masked_world_points(pointmap, object_mask, camera)
    if pts_world.shape[0] < MIN_INIT_POINTS:
        raise AlignmentError(
            f"only {pts_world.shape[0]} valid masked pointmap pixels (need >= "
            f"{MIN_INIT_POINTS}); check the depth map and mask")
    return _pose_from_world_points(object_cloud, pts_world)


def initialize_pose_multiview(object_cloud: SplatCloud, views):
    """Pose/scale initialization from the union of several masked views.

    views: [(Pointmap, Mask, Camera)]. Backprojected surface points from
    complementary viewpoints cover more of the object's surface than any
    single view, which reduces the visibility bias of the centroid and the
    RMS-radius scale estimate.
    """
    pts = [_masked_world_points(pm, mask, cam) for pm, mask, cam in views]
    pts_world = np.concatenate(pts) if pts else np.zeros((0, 3))
    if pts_world.shape[0] < MIN_INIT_POINTS:
        raise AlignmentError(
            f"only {pts_world.shape[0]} valid masked pointmap pixels across "
            f"{len(views)} views (need >= {MIN_INIT_POINTS})")
    return _pose_from_world_points(object_cloud, pts_world)


def _view_target(mask):
    """Float target image from a Mask or a soft silhouette array."""
    if isinstance(mask, Mask):
        return mask.values.astype(np.float64)
    return np.asarray(mask, dtype=np.float64)


def _silhouette_losses(cloud, pose, views, loss_t, loss_r, which="both",
                       params=SsimParams(), pyramids=None):
    """Summed (1 - metric) silhouette losses over views.

    Renders each view once; returns (L_t, L_r, all_views_empty). `which`
    selects "t", "r" or "both" (the unrequested loss comes back as nan).
    `pyramids` optionally holds one _TargetPyramid per view to reuse the
    fixed target's moments across calls.
    """
    total_t = 0.0
    total_r = 0.0
    all_empty = True
    for vi, (camera, mask) in enumerate(views):
        sil = render_silhouette(transform_cloud(cloud, pose), camera)
        if sil.max() > 1e-6:
            all_empty = False
        pyr = pyramids[vi] if pyramids else _TargetPyramid(_view_target(mask),
                                                           params)
        need = {"ssim": False, "ms_ssim": False}
        if which in ("t", "both"):
            need[loss_t] = True
        if which in ("r", "both"):
            need[loss_r] = True
        l_ssim, l_ms = pyr.losses(sil, need["ssim"], need["ms_ssim"])
        losses = {"ssim": l_ssim, "ms_ssim": l_ms}
        if which in ("t", "both"):
            total_t += losses[loss_t]
        if which in ("r", "both"):
            total_r += losses[loss_r]
    if which == "t":
        total_r = float("nan")
    elif which == "r":
        total_t = float("nan")
    return total_t, total_r, all_empty


def _rotate_about(pose: RigidPose, axis_angle, pivot) -> RigidPose:
    """Compose a rotation increment acting about a world-space pivot."""
    dq = quat_from_axis_angle(axis_angle)
    rot = quat_normalize(quat_multiply(dq, pose.rotation))
    trans = quat_rotate(dq, pose.translation - pivot) + pivot
    return RigidPose(rot, trans)


def refine_pose(object_cloud: SplatCloud, initial: RigidPose,
                config: AlignConfig) -> AlignResult:
    """Alternating translation/rotation descent on silhouette losses.

    Each iteration: a translation sub-step on loss_t, then a rotation sub-step
    on loss_r. Steps are accepted only when the summed loss decreases
    (backtracking halves the step up to max_backtracks times, then a short
    extension doubles it while the loss keeps dropping), so the accepted-loss
    trace is monotonically non-increasing by construction.
    """
    if not config.views:
        raise ValueError("AlignConfig.views must contain at least one view")
    pose = initial
    trace = []
    t_step = config.translation_step
    r_step = config.rotation_step
    converged = False
    it = 0

    params = SsimParams()
    pyramids = [_TargetPyramid(_view_target(mask), params)
                for _, mask in config.views]

    def evaluate(p, which="both"):
        return _silhouette_losses(object_cloud, p, config.views,
                                  config.loss_t, config.loss_r, which,
                                  params, pyramids)

    loss_t, loss_r, empty = evaluate(pose)
    if empty:
        raise AlignmentError("initial pose renders an empty silhouette in all views")
    total = loss_t + loss_r

    for it in range(1, config.max_iters + 1):
        accepted = False
        # ---- translation sub-step (gradient of L_t) ----
        grad = np.zeros(3)
        for axis in range(3):
            delta = np.zeros(3)
            delta[axis] = config.fd_epsilon_t
            lp, _, _ = evaluate(
                RigidPose(pose.rotation, pose.translation + delta), "t")
            lm, _, _ = evaluate(
                RigidPose(pose.rotation, pose.translation - delta), "t")
            grad[axis] = (lp - lm) / (2 * config.fd_epsilon_t)
        gnorm = np.linalg.norm(grad)
        if gnorm > 1e-12:
            direction = grad / gnorm
            trial_step = t_step
            for _ in range(config.max_backtracks + 1):
                cand = RigidPose(pose.rotation,
                                 pose.translation - trial_step * direction)
                clt, clr, cand_empty = evaluate(cand)
                if not cand_empty and clt + clr < total:
                    pose, loss_t, loss_r, total = cand, clt, clr, clt + clr
                    accepted = True
                    # extend while the loss keeps dropping (cheap line search)
                    for _ in range(3):
                        trial_step *= 2.0
                        cand = RigidPose(pose.rotation,
                                         pose.translation - trial_step * direction)
                        clt, clr, cand_empty = evaluate(cand)
                        if cand_empty or clt + clr >= total:
                            break
                        pose, loss_t, loss_r, total = cand, clt, clr, clt + clr
                    break
                trial_step *= 0.5

        # ---- rotation sub-step (gradient of L_R, pivot = posed centroid) ----
        pivot = transform_cloud(object_cloud, pose).centroids.mean(axis=0)
        grad = np.zeros(3)
        for axis in range(3):
            delta = np.zeros(3)
            delta[axis] = config.fd_epsilon_r
            _, lp, _ = evaluate(_rotate_about(pose, delta, pivot), "r")
            _, lm, _ = evaluate(_rotate_about(pose, -delta, pivot), "r")
            grad[axis] = (lp - lm) / (2 * config.fd_epsilon_r)
        gnorm = np.linalg.norm(grad)
        if gnorm > 1e-12:
            direction = grad / gnorm
            trial_step = r_step
            for _ in range(config.max_backtracks + 1):
                cand = _rotate_about(pose, -trial_step * direction, pivot)
                clt, clr, cand_empty = evaluate(cand)
                if not cand_empty and clt + clr < total:
                    pose, loss_t, loss_r, total = cand, clt, clr, clt + clr
                    accepted = True
                    for _ in range(3):
                        trial_step *= 2.0
                        cand = _rotate_about(pose, -trial_step * direction,
                                             pivot)
                        clt, clr, cand_empty = evaluate(cand)
                        if cand_empty or clt + clr >= total:
                            break
                        pose, loss_t, loss_r, total = cand, clt, clr, clt + clr
                    break
                trial_step *= 0.5

        if not accepted:
            # neither sub-step found a descent direction even after all
            # backtracking halvings: local minimum at the probe resolution
            trace.append(total)
            converged = True
            break

        trace.append(total)
        w = config.convergence_window
        if len(trace) > w and abs(trace[-1 - w] - trace[-1]) < config.convergence_tol:
            converged = True
            break
    return AlignResult(pose=pose, loss_trace=trace, converged=converged,
                       iters_used=it)
