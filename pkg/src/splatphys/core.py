"""Geometry and scene data model: splat clouds, cameras, rigid poses, depth
maps, pointmaps and masks.

All types are immutable value data built on numpy arrays (float64). Operations
are pure functions; everything here is safe to share read-only across workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

UNIT_QUAT_TOL = 1e-6


class ConfigurationError(ValueError):
    """Raised when inputs are dimensionally or structurally inconsistent."""


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z convention)
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_multiply(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    """Rotation matrix (or batch of matrices) from unit quaternion(s)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_matrix(m):
    """Unit quaternion from a 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def quat_from_axis_angle(v):
    """Quaternion from an axis-angle 3-vector (angle = |v|, axis = v/|v|)."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = v / angle
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_rotate(q, v):
    """Rotate vector(s) v by unit quaternion q."""
    return np.asarray(v, dtype=np.float64) @ quat_to_matrix(q).T


# ---------------------------------------------------------------------------
# rigid poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidPose:
    """SE(3) transform: p(x) = R(rotation) x + translation."""

    rotation: np.ndarray    # (4,) unit quaternion, wxyz
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(rot) - 1.0) > UNIT_QUAT_TOL:
            raise ValueError(f"quaternion not unit-norm: |q|={np.linalg.norm(rot)}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity():
        return RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(rot_matrix, translation):
        return RigidPose(quat_from_matrix(rot_matrix), translation)

    def rotation_matrix(self):
        return quat_to_matrix(self.rotation)

    def apply(self, points):
        """Apply to a (3,) point or (n, 3) point array."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation_matrix().T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self after other: (self.compose(other))(x) = self(other(x))."""
        rot = quat_normalize(quat_multiply(self.rotation, other.rotation))
        trans = self.apply(other.translation)
        return RigidPose(rot, trans)

    def inverse(self) -> "RigidPose":
        inv_rot = quat_conjugate(self.rotation)
        inv_trans = -quat_rotate(inv_rot, self.translation)
        return RigidPose(quat_normalize(inv_rot), inv_trans)


# ---------------------------------------------------------------------------
# scene data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplatCloud:
    """Anisotropic Gaussian splats: centroid, factored covariance, opacity,
    flat RGB color.

    Covariance is stored factored as R(q) diag(scales^2) R(q)^T, which is
    positive-semidefinite by construction. Colors are plain RGB (no
    view-dependent terms).
    """

    centroids: np.ndarray     # (n, 3) meters
    scales: np.ndarray        # (n, 3) strictly positive
    orientations: np.ndarray  # (n, 4) unit quaternions, wxyz
    opacities: np.ndarray     # (n,) in [0, 1]
    colors: np.ndarray        # (n, 3) RGB in [0, 1]

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.scales, dtype=np.float64).reshape(-1, 3)
        q = np.asarray(self.orientations, dtype=np.float64).reshape(-1, 4)
        a = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        n = c.shape[0]
        if not (s.shape[0] == q.shape[0] == a.shape[0] == col.shape[0] == n):
            raise ValueError("splat attribute arrays have mismatched lengths")
        if n and np.min(s) <= 0:
            raise ValueError("splat scales must be strictly positive")
        if n and np.max(np.abs(np.linalg.norm(q, axis=1) - 1.0)) > UNIT_QUAT_TOL:
            raise ValueError("splat orientations must be unit quaternions")
        a = np.clip(a, 0.0, 1.0)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "orientations", q)
        object.__setattr__(self, "opacities", a)
        object.__setattr__(self, "colors", col)

    def __len__(self):
        return self.centroids.shape[0]

    def covariances(self):
        """Dense (n, 3, 3) world-space covariance matrices."""
        r = quat_to_matrix(self.orientations)
        d = self.scales ** 2
        return np.einsum("nij,nj,nkj->nik", r, d, r)

    def with_colors(self, colors):
        return replace(self, colors=np.asarray(colors, dtype=np.float64))


def transform_cloud(cloud: SplatCloud, pose: RigidPose) -> SplatCloud:
    """Rigidly transform a splat cloud; scales, opacities, colors unchanged."""
    if len(cloud) == 0:
        return cloud
    centroids = pose.apply(cloud.centroids)
    orient = quat_normalize(quat_multiply(pose.rotation[None, :], cloud.orientations))
    return replace(cloud, centroids=centroids, orientations=orient)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; (u, v) addresses pixel centers at integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: RigidPose = field(default_factory=RigidPose.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class DepthMap:
    """Camera-frame Z depth (meters) with per-pixel validity."""

    values: np.ndarray    # (H, W) float
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.validity, dtype=bool)
        if v.shape != m.shape or v.ndim != 2:
            raise ValueError("depth values/validity shape mismatch")
        if np.any(~np.isfinite(v[m])) or (m.any() and np.min(v[m]) <= 0):
            raise ValueError("valid depth entries must be finite and > 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "validity", m)

    @staticmethod
    def from_values(values):
        """Build a depth map, marking non-positive / non-finite entries invalid."""
        v = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(v) & (v > 0)
        return DepthMap(np.where(valid, v, 1.0), valid)


@dataclass(frozen=True)
class Pointmap:
    """Per-pixel 3D camera-frame coordinates (H, W, 3) with validity."""

    points: np.ndarray    # (H, W, 3)
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        m = np.asarray(self.validity, dtype=bool)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[:2] != m.shape:
            raise ValueError("pointmap points/validity shape mismatch")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "validity", m)


@dataclass(frozen=True)
class Mask:
    """Boolean foreground mask."""

    values: np.ndarray  # (H, W) bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=bool)
        if v.ndim != 2:
            raise ValueError("mask must be 2D")
        object.__setattr__(self, "values", v)


# ---------------------------------------------------------------------------
# projection operations
# ---------------------------------------------------------------------------

def backproject(depth: DepthMap, camera: Camera) -> Pointmap:
    """Pinhole back-projection of a depth map to a camera-frame pointmap.

    X = (u - cx) D / fx, Y = (v - cy) D / fy, Z = D at each valid pixel.
    """
    h, w = depth.values.shape
    if (w, h) != (camera.width, camera.height):
        raise ConfigurationError(
            f"depth map {w}x{h} does not match camera {camera.width}x{camera.height}")
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    d = depth.values
    pts = np.empty((h, w, 3), dtype=np.float64)
    pts[..., 0] = (u - camera.cx) * d / camera.fx
    pts[..., 1] = (v - camera.cy) * d / camera.fy
    pts[..., 2] = d
    pts[~depth.validity] = 0.0
    # restore exact Z equality where valid (X/Y zeroing above only hits invalid)
    pts[..., 2] = np.where(depth.validity, d, 0.0)
    return Pointmap(pts, depth.validity.copy())


def project_point(camera: Camera, world_point):
    """Project a world point to (u, v, depth). Returns None if Z <= 0."""
    pc = camera.world_to_camera.apply(np.asarray(world_point, dtype=np.float64))
    z = pc[2]
    if z <= 0:
        return None
    u = camera.fx * pc[0] / z + camera.cx
    v = camera.fy * pc[1] / z + camera.cy
    return (u, v, z)
