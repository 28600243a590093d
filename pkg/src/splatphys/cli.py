"""Command-line front end.

Subcommands: backproject, align-pose, refine-physical, distill-appearance,
simulate, render, metrics, run (full pipeline), validate (bundle check).
Thread count can be capped with --threads or the SPLATPHYS_THREADS
environment variable (applied to the BLAS pools numpy uses).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .core import Mask, RigidPose, backproject
from .io import (camera_from_json, load_camera, load_depth, load_mask,
                 load_ppm, load_splat_ply, pose_from_json, pose_to_json,
                 save_depth, save_splat_ply)
from .metrics import edge_error, masked_psnr_ssim, ms_ssim, ssim, to_grayscale
from .physlayout import RelationGraph, refine_layout
from .pipeline import STAGES, PipelineError, SceneBundle, evaluate, run_pipeline
from .posealign import AlignConfig, refine_pose
from .appearance import DistillConfig, distill_colors


def _apply_threads(n):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
            os.environ[var] = str(n)


def _load_views(path, need_image=False):
    """views.json: {"views": [{"camera": ..., "mask": ..., "image": ...}]}."""
    root = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        spec = json.load(f)
    views = []
    for entry in spec["views"]:
        cam = load_camera(os.path.join(root, entry["camera"]))
        mask = load_mask(os.path.join(root, entry["mask"]))
        if need_image:
            image = load_ppm(os.path.join(root, entry["image"]))
            views.append((cam, image, mask))
        else:
            views.append((cam, mask))
    return views


def cmd_backproject(args):
    depth = load_depth(args.depth)
    cam = load_camera(args.camera)
    pm = backproject(depth, cam)
    np.save(args.out, pm.points.astype(np.float32))
    print(f"wrote pointmap {pm.points.shape} -> {args.out}")
    return 0


def cmd_align_pose(args):
    cloud = load_splat_ply(args.object)
    views = _load_views(args.views)
    config = AlignConfig(max_iters=args.max_iters, views=views)
    if args.initial:
        with open(args.initial) as f:
            obj = json.load(f)
        pose = pose_from_json(obj)
        scale = obj.get("scale", 1.0)
    else:
        pose, scale = RigidPose.identity(), 1.0
    result = refine_pose(cloud, pose, config)
    with open(args.out, "w") as f:
        json.dump({**pose_to_json(result.pose), "scale": scale,
                   "loss_trace": result.loss_trace,
                   "converged": result.converged}, f, indent=2)
    print(f"refined pose ({result.iters_used} iters, "
          f"converged={result.converged}) -> {args.out}")
    return 0


def cmd_refine_physical(args):
    graph = RelationGraph.load(args.graph)
    with open(args.poses) as f:
        poses_in = json.load(f)
    objects = {}
    root = os.path.dirname(os.path.abspath(args.poses))
    for oid, entry in poses_in.items():
        cloud = load_splat_ply(os.path.join(root, entry["object"]))
        objects[oid] = (cloud, pose_from_json(entry))
    result = refine_layout(objects, graph)
    out = {oid: pose_to_json(p) for oid, p in result.poses.items()}
    out["_converged"] = result.converged
    with open(args.out, "w") as f:
        json.dump(out, f, indent=2)
    print(f"layout refinement converged={result.converged} -> {args.out}")
    return 0


def cmd_distill_appearance(args):
    cloud = load_splat_ply(args.object)
    with open(args.pose) as f:
        pose = pose_from_json(json.load(f))
    views = _load_views(args.views, need_image=True)
    config = DistillConfig(iters=args.iters, views=views)
    result = distill_colors(cloud, pose, config)
    save_splat_ply(args.out, result.cloud)
    flag = " (empty overlap, colors unchanged)" if result.empty_overlap else ""
    print(f"distilled colors{flag} -> {args.out}")
    return 0


def cmd_simulate(args):
    bundle = SceneBundle.load(args.bundle)
    run_pipeline(bundle, {"simulate"}, args.out, seed=args.seed)
    print(f"simulation frames -> {os.path.join(args.out, 'simulate')}")
    return 0


def cmd_render(args):
    bundle = SceneBundle.load(args.bundle)
    run_pipeline(bundle, {"render"}, args.out, seed=args.seed)
    print(f"rendered frames -> {os.path.join(args.out, 'render')}")
    return 0


def _load_image(path):
    if path.endswith(".ppm"):
        return load_ppm(path)
    from PIL import Image
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def cmd_metrics(args):
    a = _load_image(args.rendered)
    b = _load_image(args.truth)
    if args.mask:
        mask = load_mask(args.mask)
    else:
        mask = Mask(np.ones(np.asarray(a).shape[:2], dtype=bool))
    psnr, ssim_val = masked_psnr_ssim(a, b, mask)
    ms = ms_ssim(to_grayscale(a), to_grayscale(b))
    report = {
        "psnr": None if psnr == float("inf") else psnr,
        "psnr_infinite": psnr == float("inf"),
        "ssim": ssim_val,
        "ms_ssim": float(ms),
        "ms_ssim_fell_back": ms.fell_back,
        "edge_error": edge_error(a, b, mask),
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_run(args):
    bundle = SceneBundle.load(args.bundle)
    stages = set(args.stages.split(",")) - {""} if args.stages else set(STAGES)
    manifest = run_pipeline(bundle, stages, args.out, seed=args.seed)
    print(f"pipeline ok; manifest -> {os.path.join(args.out, 'manifest.json')}")
    if args.evaluate:
        views = []
        for vi, entry in enumerate(bundle.cameras):
            gt = load_ppm(bundle.path(entry["image"]))
            union = None
            for rel in entry.get("masks", {}).values():
                m = load_mask(bundle.path(rel)).values
                union = m if union is None else (union | m)
            if union is not None and union.any():
                views.append((vi, gt, Mask(union)))
        if views:
            report = evaluate(args.out, views)
            print(json.dumps(report["mean"], indent=2))
    return 0


def cmd_validate(args):
    bundle = SceneBundle.load(args.bundle)
    bundle.validate()
    print(f"bundle ok: {len(bundle.objects)} objects, "
          f"{len(bundle.cameras)} views")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="splatphys",
        description="Splat-scene object restoration and MPM simulation")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("SPLATPHYS_THREADS", 0)))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backproject", help="depth map -> pointmap (.npy)")
    p.add_argument("--depth", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("align-pose", help="render-and-compare pose refinement")
    p.add_argument("--object", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--initial")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align_pose)

    p = sub.add_parser("refine-physical", help="relation-graph layout refinement")
    p.add_argument("--graph", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine_physical)

    p = sub.add_parser("distill-appearance", help="masked color distillation")
    p.add_argument("--object", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill_appearance)

    p = sub.add_parser("simulate", help="run the MPM stage of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render simulated frames of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("metrics", help="compare two images")
    p.add_argument("rendered")
    p.add_argument("truth")
    p.add_argument("--mask")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("run", help="run pipeline stages on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stages", help="comma-separated subset of "
                                    + ",".join(STAGES))
    p.add_argument("--evaluate", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a bundle without running")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    try:
        return args.func(args)
    except (PipelineError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
