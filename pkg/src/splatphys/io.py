"""On-disk formats.

Splat clouds as binary little-endian PLY (x,y,z, scale_0..2, rot_0..3,
opacity, f_dc_0..2), cameras as JSON, masks as 8-bit PGM or PNG, color frames
as binary PPM, depth as raw little-endian float32 with an 8-byte
(width, height) uint32 header. Scales and opacities are stored as their
linear values (not log/logit encoded).
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .core import Camera, DepthMap, Mask, RigidPose, SplatCloud

SPLAT_PROPERTIES = ["x", "y", "z", "scale_0", "scale_1", "scale_2",
                    "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
                    "f_dc_0", "f_dc_1", "f_dc_2"]


# ---------------------------------------------------------------------------
# splat PLY
# ---------------------------------------------------------------------------

def save_splat_ply(path, cloud: SplatCloud):
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {name}" for name in SPLAT_PROPERTIES]
    header.append("end_header")
    data = np.empty((n, len(SPLAT_PROPERTIES)), dtype="<f4")
    data[:, 0:3] = cloud.centroids
    data[:, 3:6] = cloud.scales
    data[:, 6:10] = cloud.orientations
    data[:, 10] = cloud.opacities
    data[:, 11:14] = cloud.colors
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_splat_ply(path) -> SplatCloud:
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: not a PLY file (missing end_header)")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    if not header or header[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    fmt = next((ln.split()[1] for ln in header if ln.startswith("format ")), None)
    if fmt != "binary_little_endian":
        raise ValueError(f"{path}: unsupported PLY format {fmt!r}")
    n = None
    props = []
    for ln in header:
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            if parts[1] != "float":
                raise ValueError(f"{path}: only float properties supported")
            props.append(parts[2])
    if n is None:
        raise ValueError(f"{path}: missing vertex element")
    body = raw[end + len(b"end_header\n"):]
    data = np.frombuffer(body, dtype="<f4", count=n * len(props)
                         ).reshape(n, len(props)).astype(np.float64)
    cols = {name: data[:, i] for i, name in enumerate(props)}
    missing = [p for p in SPLAT_PROPERTIES if p not in cols]
    if missing:
        raise ValueError(f"{path}: missing splat properties {missing}")
    quats = np.stack([cols["rot_0"], cols["rot_1"], cols["rot_2"], cols["rot_3"]], axis=1)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    quats = quats / np.where(norms > 1e-12, norms, 1.0)
    return SplatCloud(
        centroids=np.stack([cols["x"], cols["y"], cols["z"]], axis=1),
        scales=np.stack([cols["scale_0"], cols["scale_1"], cols["scale_2"]], axis=1),
        orientations=quats,
        opacities=cols["opacity"],
        colors=np.stack([cols["f_dc_0"], cols["f_dc_1"], cols["f_dc_2"]], axis=1),
    )


def save_points_ply(path, points, object_ids=None):
    """Simulation snapshot PLY: x,y,z (+ object_id when given)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if object_ids is not None:
        header.append("property int object_id")
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if object_ids is None:
            f.write(points.astype("<f4").tobytes())
        else:
            rec = np.empty(n, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                     ("oid", "<i4")])
            rec["x"], rec["y"], rec["z"] = points.T
            rec["oid"] = np.asarray(object_ids, dtype=np.int32)
            f.write(rec.tobytes())


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

def camera_to_json(camera: Camera):
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "world_to_camera": {
            "rotation": list(camera.world_to_camera.rotation),
            "translation": list(camera.world_to_camera.translation),
        },
    }


def camera_from_json(obj) -> Camera:
    pose = obj.get("world_to_camera", {})
    return Camera(
        fx=float(obj["fx"]), fy=float(obj["fy"]),
        cx=float(obj["cx"]), cy=float(obj["cy"]),
        width=int(obj["width"]), height=int(obj["height"]),
        world_to_camera=RigidPose(
            np.asarray(pose.get("rotation", [1.0, 0.0, 0.0, 0.0])),
            np.asarray(pose.get("translation", [0.0, 0.0, 0.0]))),
    )


def save_camera(path, camera: Camera):
    with open(path, "w") as f:
        json.dump(camera_to_json(camera), f, indent=2)


def load_camera(path) -> Camera:
    with open(path) as f:
        return camera_from_json(json.load(f))


# ---------------------------------------------------------------------------
# poses
# ---------------------------------------------------------------------------

def pose_to_json(pose: RigidPose):
    return {"rotation": list(pose.rotation), "translation": list(pose.translation)}


def pose_from_json(obj) -> RigidPose:
    return RigidPose(np.asarray(obj["rotation"]), np.asarray(obj["translation"]))


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def save_ppm(path, image):
    """Binary P6 PPM from an (H, W, 3) float image in [0, 1]."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def load_ppm(path):
    with open(path, "rb") as f:
        magic, dims, maxval, data = _read_netpbm(f)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = dims
    img = np.frombuffer(data, dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)
    return img.astype(np.float64) / maxval


def save_pgm(path, gray):
    """Binary P5 PGM from an (H, W) float image in [0, 1] (or bool)."""
    g = np.asarray(gray)
    if g.dtype == bool:
        data = np.where(g, 255, 0).astype(np.uint8)
    else:
        data = np.round(np.clip(g, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def load_pgm(path):
    with open(path, "rb") as f:
        magic, dims, maxval, data = _read_netpbm(f)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = dims
    img = np.frombuffer(data, dtype=np.uint8, count=h * w).reshape(h, w)
    return img.astype(np.float64) / maxval


def _read_netpbm(f):
    magic = f.read(2)
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ValueError("truncated netpbm header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    return magic, (fields[0], fields[1]), fields[2], f.read()


def load_mask(path) -> Mask:
    """Mask from PGM or PNG; any nonzero pixel is foreground."""
    path = str(path)
    if path.endswith(".pgm"):
        return Mask(load_pgm(path) > 0)
    from PIL import Image
    arr = np.asarray(Image.open(path).convert("L"))
    return Mask(arr > 0)


def save_mask(path, mask: Mask):
    path = str(path)
    if path.endswith(".pgm"):
        save_pgm(path, mask.values)
    else:
        from PIL import Image
        Image.fromarray(np.where(mask.values, 255, 0).astype(np.uint8)).save(path)


# ---------------------------------------------------------------------------
# raw depth
# ---------------------------------------------------------------------------

def save_depth(path, depth: DepthMap):
    """Raw little-endian float32 with (width, height) uint32 header.

    Invalid pixels are written as 0 (non-positive entries decode as invalid).
    """
    h, w = depth.values.shape
    data = np.where(depth.validity, depth.values, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(data.tobytes())


def load_depth(path) -> DepthMap:
    with open(path, "rb") as f:
        w, h = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(), dtype="<f4", count=w * h)
    return DepthMap.from_values(data.reshape(h, w).astype(np.float64))
