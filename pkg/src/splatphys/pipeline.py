"""Pipeline driver: bundle loading, staged execution, manifest, evaluation.

All inter-stage state lives on disk in the documented formats, so any stage
can be re-run in isolation and upstream tools can inject data at any
boundary. A single RNG seed recorded in the manifest governs every stochastic
choice. Stage wall times go to a separate timings.json so manifests from
identical inputs stay bitwise identical.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .core import DepthMap, Mask, RigidPose, backproject
from .io import (load_camera, load_depth, load_mask, load_ppm, load_splat_ply,
                 pose_from_json, pose_to_json, save_points_ply, save_ppm,
                 save_splat_ply)
from .metrics import edge_error, masked_psnr_ssim
from .mpm import (Collider, ForceEvent, Material, MpmGrid, MpmState,
                  check_cfl, particles_from_clouds, polar_rotation,
                  simulate_frames)
from .physlayout import RelationGraph, refine_layout
from .posealign import AlignConfig, initialize_pose_multiview, refine_pose
from .appearance import DistillConfig, distill_colors
from .raster import render
from .core import SplatCloud, transform_cloud
from .synthetic import merge_clouds

STAGES = ("init", "align", "physfit", "distill", "simulate", "render")
STAGE_DEPS = {"init": (), "align": ("init",), "physfit": ("align",),
              "distill": ("physfit",), "simulate": ("physfit",),
              "render": ("simulate", "distill")}


class PipelineError(RuntimeError):
    pass


@dataclass
class SceneBundle:
    root: str
    background: str
    objects: dict              # id -> ply path (relative to root)
    cameras: list              # [{"camera", "image", "depth", "masks": {id: path}}]
    relation_graph: str
    sim_config: str
    force_schedule: str = None

    @staticmethod
    def load(path) -> "SceneBundle":
        path = os.path.abspath(path)
        with open(path) as f:
            obj = json.load(f)
        root = os.path.dirname(path)
        return SceneBundle(
            root=root,
            background=obj["background"],
            objects=dict(obj["objects"]),
            cameras=list(obj["cameras"]),
            relation_graph=obj["relation_graph"],
            sim_config=obj["sim_config"],
            force_schedule=obj.get("force_schedule"),
        )

    def path(self, rel):
        return os.path.join(self.root, rel)

    def validate(self):
        """Check that every referenced file exists and parses."""
        problems = []
        for rel in [self.background, self.relation_graph, self.sim_config] + \
                ([self.force_schedule] if self.force_schedule else []) + \
                list(self.objects.values()):
            if not os.path.exists(self.path(rel)):
                problems.append(f"missing file: {rel}")
        for entry in self.cameras:
            for key in ("camera", "image", "depth"):
                if not os.path.exists(self.path(entry[key])):
                    problems.append(f"missing file: {entry[key]}")
            for oid, rel in entry.get("masks", {}).items():
                if oid not in self.objects:
                    problems.append(f"mask for unknown object {oid!r}")
                if not os.path.exists(self.path(rel)):
                    problems.append(f"missing file: {rel}")
        if problems:
            raise PipelineError("; ".join(problems))
        graph = RelationGraph.load(self.path(self.relation_graph))
        for oid in graph.objects:
            if oid not in self.objects:
                raise PipelineError(f"relation graph object {oid!r} not in bundle")
        load_splat_ply(self.path(self.background))
        for rel in self.objects.values():
            load_splat_ply(self.path(rel))
        for entry in self.cameras:
            load_camera(self.path(entry["camera"]))
        return True


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _views_for(bundle, object_id, need_image=False):
    views = []
    for entry in bundle.cameras:
        if object_id not in entry.get("masks", {}):
            continue
        cam = load_camera(bundle.path(entry["camera"]))
        mask = load_mask(bundle.path(entry["masks"][object_id]))
        if need_image:
            image = load_ppm(bundle.path(entry["image"]))
            views.append((cam, image, mask))
        else:
            views.append((cam, mask))
    return views


def run_pipeline(bundle: SceneBundle, stages, out_dir, seed: int = 0,
                 align_config: AlignConfig = None,
                 distill_config: DistillConfig = None):
    """Run the requested stages, reading each predecessor's on-disk outputs.

    stages: iterable subset of STAGES; an empty set performs a manifest-only
    dry run validating the bundle. Returns the manifest dict.
    """
    stages = set(stages)
    unknown = stages - set(STAGES)
    if unknown:
        raise PipelineError(f"unknown stages: {sorted(unknown)}")
    bundle.validate()
    os.makedirs(out_dir, exist_ok=True)

    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest = {"version": __version__, "seed": seed, "stages": {},
                "bundle": os.path.join(bundle.root, "bundle.json")}
    if os.path.exists(manifest_path):
        with open(manifest_path) as f:
            prev = json.load(f)
        manifest["stages"].update(prev.get("stages", {}))
    timings = {}

    def require(stage):
        for dep in STAGE_DEPS[stage]:
            dep_dir = os.path.join(out_dir, dep)
            if dep in stages:
                continue
            if not os.path.isdir(dep_dir):
                raise PipelineError(
                    f"stage {stage!r} requires prior stage {dep!r} "
                    f"(missing {dep_dir})")

    def record(stage, outputs):
        manifest["stages"][stage] = {
            "outputs": {os.path.relpath(p, out_dir): _sha256(p)
                        for p in sorted(outputs)},
        }

    for stage in STAGES:
        if stage not in stages:
            continue
        require(stage)
        t0 = time.time()
        try:
            outputs = _run_stage(stage, bundle, out_dir, seed,
                                 align_config, distill_config)
        except Exception as exc:
            raise PipelineError(f"stage {stage!r}: {exc}") from exc
        timings[stage] = time.time() - t0
        record(stage, outputs)

    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "timings.json"), "w") as f:
        json.dump(timings, f, indent=2)
    return manifest


def _run_stage(stage, bundle, out_dir, seed, align_config, distill_config):
    stage_dir = os.path.join(out_dir, stage)
    os.makedirs(stage_dir, exist_ok=True)
    handler = {
        "init": _stage_init,
        "align": _stage_align,
        "physfit": _stage_physfit,
        "distill": _stage_distill,
        "simulate": _stage_simulate,
        "render": _stage_render,
    }[stage]
    return handler(bundle, out_dir, stage_dir, seed=seed,
                   align_config=align_config, distill_config=distill_config)


def _stage_init(bundle, out_dir, stage_dir, **kw):
    outputs = []
    for oid, rel in bundle.objects.items():
        cloud = load_splat_ply(bundle.path(rel))
        views = []
        for entry in bundle.cameras:
            if oid not in entry.get("masks", {}):
                continue
            cam = load_camera(bundle.path(entry["camera"]))
            depth = load_depth(bundle.path(entry["depth"]))
            mask = load_mask(bundle.path(entry["masks"][oid]))
            views.append((backproject(depth, cam), mask, cam))
        if not views:
            raise PipelineError(f"object {oid!r}: no view provides a mask")
        pose, scale = initialize_pose_multiview(cloud, views)
        out = os.path.join(stage_dir, f"pose_{oid}.json")
        with open(out, "w") as f:
            json.dump({**pose_to_json(pose), "scale": scale}, f, indent=2)
        outputs.append(out)
    return outputs


def _load_stage_pose(out_dir, stage, oid):
    path = os.path.join(out_dir, stage, f"pose_{oid}.json")
    with open(path) as f:
        obj = json.load(f)
    return pose_from_json(obj), obj.get("scale", 1.0)


def _scaled(cloud, scale):
    if abs(scale - 1.0) < 1e-9:
        return cloud
    center = cloud.centroids.mean(axis=0)
    return SplatCloud(
        centroids=(cloud.centroids - center) * scale + center,
        scales=cloud.scales * scale,
        orientations=cloud.orientations,
        opacities=cloud.opacities,
        colors=cloud.colors,
    )


def _stage_align(bundle, out_dir, stage_dir, align_config=None, **kw):
    outputs = []
    for oid, rel in bundle.objects.items():
        cloud = load_splat_ply(bundle.path(rel))
        init_pose, scale = _load_stage_pose(out_dir, "init", oid)
        cloud = _scaled(cloud, scale)
        config = align_config or AlignConfig(max_iters=60)
        config.views = _views_for(bundle, oid)
        result = refine_pose(cloud, init_pose, config)
        out = os.path.join(stage_dir, f"pose_{oid}.json")
        with open(out, "w") as f:
            json.dump({**pose_to_json(result.pose), "scale": scale,
                       "loss_trace": result.loss_trace,
                       "converged": result.converged,
                       "iters_used": result.iters_used}, f, indent=2)
        outputs.append(out)
    return outputs


def _stage_physfit(bundle, out_dir, stage_dir, **kw):
    graph = RelationGraph.load(bundle.path(bundle.relation_graph))
    objects = {}
    scales = {}
    for oid, rel in bundle.objects.items():
        cloud = load_splat_ply(bundle.path(rel))
        pose, scale = _load_stage_pose(out_dir, "align", oid)
        objects[oid] = (_scaled(cloud, scale), pose)
        scales[oid] = scale
    result = refine_layout(objects, graph)
    outputs = []
    for oid, pose in result.poses.items():
        out = os.path.join(stage_dir, f"pose_{oid}.json")
        with open(out, "w") as f:
            json.dump({**pose_to_json(pose), "scale": scales[oid],
                       "converged": result.converged}, f, indent=2)
        outputs.append(out)
    return outputs


def _stage_distill(bundle, out_dir, stage_dir, distill_config=None, **kw):
    outputs = []
    for oid, rel in bundle.objects.items():
        cloud = load_splat_ply(bundle.path(rel))
        pose, scale = _load_stage_pose(out_dir, "physfit", oid)
        cloud = _scaled(cloud, scale)
        config = distill_config or DistillConfig(iters=100)
        config.views = _views_for(bundle, oid, need_image=True)
        result = distill_colors(cloud, pose, config)
        out = os.path.join(stage_dir, f"{oid}.ply")
        save_splat_ply(out, result.cloud)
        pose_out = os.path.join(stage_dir, f"pose_{oid}.json")
        with open(pose_out, "w") as f:
            json.dump({**pose_to_json(pose), "scale": scale}, f, indent=2)
        outputs.extend([out, pose_out])
    return outputs


def _load_sim_setup(bundle, out_dir, pose_stage="physfit"):
    with open(bundle.path(bundle.sim_config)) as f:
        cfg = json.load(f)
    grid_cfg = cfg["grid"]
    grid = MpmGrid(cell_size=float(grid_cfg["cell_size"]),
                   dims=tuple(grid_cfg["dims"]),
                   origin=np.asarray(grid_cfg.get("origin", [0, 0, 0]),
                                     dtype=np.float64))
    object_names = sorted(bundle.objects)
    clouds, materials = [], []
    for oid in object_names:
        rel = bundle.objects[oid]
        cloud = load_splat_ply(bundle.path(rel))
        pose, scale = _load_stage_pose(out_dir, pose_stage, oid)
        posed = transform_cloud(_scaled(cloud, scale), pose)
        clouds.append(posed.centroids)
        m = cfg["materials"].get(oid, {})
        materials.append(Material(
            youngs_modulus=float(m.get("youngs_modulus", 1e5)),
            poisson_ratio=float(m.get("poisson_ratio", 0.3)),
            density=float(m.get("density", 1000.0))))
    colliders = [Collider(np.asarray(c["n"], dtype=np.float64), float(c["d"]),
                          c.get("condition", "separating"),
                          float(c.get("friction", 0.0)))
                 for c in cfg.get("colliders", [])]
    schedule = []
    if bundle.force_schedule:
        with open(bundle.path(bundle.force_schedule)) as f:
            sched_cfg = json.load(f)
        for ev in sched_cfg.get("events", []):
            target = object_names.index(ev["target_object"])
            if ev["kind"] == "impulse_at_point":
                schedule.append(ForceEvent(
                    kind="impulse_at_point", target_object=target,
                    start_frame=int(ev["start_frame"]),
                    end_frame=int(ev["end_frame"]),
                    point=np.asarray(ev["point"], dtype=np.float64),
                    radius=float(ev["radius"]),
                    delta_v=np.asarray(ev["delta_v"], dtype=np.float64)))
            else:
                schedule.append(ForceEvent(
                    kind="force_field", target_object=target,
                    start_frame=int(ev["start_frame"]),
                    end_frame=int(ev["end_frame"]),
                    acceleration=np.asarray(ev["acceleration"],
                                            dtype=np.float64)))
    return cfg, grid, object_names, clouds, materials, colliders, schedule


def _stage_simulate(bundle, out_dir, stage_dir, seed=0, **kw):
    (cfg, grid, object_names, clouds, materials, colliders,
     schedule) = _load_sim_setup(bundle, out_dir)
    particles = particles_from_clouds(clouds, materials, grid, seed=seed)
    for mat in materials:
        check_cfl(float(cfg["dt"]), grid.cell_size, mat)
    state = MpmState(particles=particles, grid=grid,
                     object_names=object_names)
    snaps = simulate_frames(
        state, int(cfg["frames"]), float(cfg["dt"]),
        np.asarray(cfg["gravity"], dtype=np.float64),
        schedule=schedule, colliders=colliders,
        substeps_per_frame=int(cfg.get("substeps_per_frame", 300)))
    outputs = []
    for snap in snaps:
        out = os.path.join(stage_dir, f"frame_{snap.frame:04d}.ply")
        save_points_ply(out, snap.positions, snap.object_ids)
        # deformation gradients, needed to co-rotate splats at render time
        fout = os.path.join(stage_dir, f"frame_{snap.frame:04d}_F.npy")
        np.save(fout, snap.deformation_gradients.astype(np.float32))
        outputs.extend([out, fout])
    return outputs


def _stage_render(bundle, out_dir, stage_dir, **kw):
    from .core import quat_from_matrix, quat_multiply, quat_normalize

    background = load_splat_ply(bundle.path(bundle.background))
    (cfg, grid, object_names, clouds, materials, colliders,
     schedule) = _load_sim_setup(bundle, out_dir)
    # refined appearance clouds where the distill stage ran
    posed_objects = []
    for oid in object_names:
        distilled = os.path.join(out_dir, "distill", f"{oid}.ply")
        if os.path.exists(distilled):
            cloud = load_splat_ply(distilled)
        else:
            pose, scale = _load_stage_pose(out_dir, "physfit", oid)
            cloud = _scaled(load_splat_ply(bundle.path(bundle.objects[oid])), scale)
        pose, _ = _load_stage_pose(out_dir, "physfit", oid)
        posed_objects.append(transform_cloud(cloud, pose))

    cameras = [load_camera(bundle.path(e["camera"])) for e in bundle.cameras]
    sim_dir = os.path.join(out_dir, "simulate")
    frames = sorted(p for p in os.listdir(sim_dir)
                    if p.endswith(".ply"))
    outputs = []
    base = merge_clouds(*posed_objects)
    counts = [len(c) for c in posed_objects]
    for fi, frame_name in enumerate(frames):
        positions, oids = _load_points_ply(os.path.join(sim_dir, frame_name))
        fmat = np.load(os.path.join(
            sim_dir, frame_name.replace(".ply", "_F.npy"))).astype(np.float64)
        if positions.shape[0] != len(base):
            raise PipelineError(
                "simulate snapshots do not match the object clouds "
                f"({positions.shape[0]} particles vs {len(base)} splats)")
        rot = polar_rotation(fmat)
        dq = np.array([quat_from_matrix(r) for r in rot])
        quats = quat_normalize(quat_multiply(dq, base.orientations))
        advected = SplatCloud(positions, base.scales, quats,
                              base.opacities, base.colors)
        scene = merge_clouds(background, advected)
        for vi, cam in enumerate(cameras):
            out = render(scene, cam)
            path = os.path.join(stage_dir, f"view{vi}_frame{fi:04d}.ppm")
            save_ppm(path, out.color)
            outputs.append(path)
    return outputs


def _load_points_ply(path):
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    n = next(int(ln.split()[2]) for ln in header
             if ln.startswith("element vertex"))
    props = [ln.split() for ln in header if ln.startswith("property")]
    body = raw[end + len(b"end_header\n"):]
    if any(p[1] == "int" for p in props):
        rec = np.frombuffer(body, dtype=[("x", "<f4"), ("y", "<f4"),
                                         ("z", "<f4"), ("oid", "<i4")], count=n)
        pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
        return pts, rec["oid"].astype(np.int64)
    data = np.frombuffer(body, dtype="<f4", count=n * 3).reshape(n, 3)
    return data.astype(np.float64), np.zeros(n, dtype=np.int64)


def evaluate(run_dir, views):
    """Metric report comparing rendered frames against ground-truth views.

    views: [(view_index, gt image array, gt Mask)]. Uses the first rendered
    frame of each view (the restored static scene). Returns the report dict.
    """
    render_dir = os.path.join(run_dir, "render")
    if not os.path.isdir(render_dir):
        raise PipelineError("run directory has no render stage outputs")
    per_view = []
    for vi, gt_image, gt_mask in views:
        path = os.path.join(render_dir, f"view{vi}_frame0000.ppm")
        if not os.path.exists(path):
            raise PipelineError(f"no rendered frame for view {vi}")
        rendered = load_ppm(path)
        ee = float(edge_error(rendered, gt_image, gt_mask))
        psnr, ssim_val = masked_psnr_ssim(rendered, gt_image, gt_mask)
        infinite = bool(psnr == float("inf"))
        per_view.append({"view": int(vi), "edge_error": ee,
                         "psnr": None if infinite else float(psnr),
                         "psnr_infinite": infinite,
                         "ssim": float(ssim_val)})
    finite_psnr = [v["psnr"] for v in per_view if not v["psnr_infinite"]]
    report = {
        "per_view": per_view,
        "mean": {
            "edge_error": float(np.mean([v["edge_error"] for v in per_view])),
            "psnr": float(np.mean(finite_psnr)) if finite_psnr else None,
            "ssim": float(np.mean([v["ssim"] for v in per_view])),
        },
    }
    with open(os.path.join(run_dir, "metrics_report.json"), "w") as f:
        json.dump(report, f, indent=2)
    return report
