"""Physics-constrained layout refinement.

Consumes a relation graph (support planes + object/object margins) and
adjusts object poses by gradient descent so that bottom-surface points sit
inside the epsilon slab of their support plane and constrained object pairs
keep a minimum separation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import RigidPose, SplatCloud, transform_cloud

DEFAULT_EPSILON = 0.005   # m, half-width of the contact slab
DEFAULT_MARGIN = 0.01     # m, minimum object/object separation
CONTACT_QUANTILE = 0.02   # fraction of lowest points forming the contact set
SOFTMIN_K = 32
SOFTMIN_TEMPERATURE = 1e-3


@dataclass(frozen=True)
class RelationGraph:
    objects: list            # object ids (strings)
    planes: list             # [(normal (3,), offset d)] with |normal| = 1
    os_edges: list           # [(object_id, plane_index, epsilon)]
    oo_edges: list           # [((id_a, id_b), margin)]

    def __post_init__(self):
        planes = []
        for n, d in self.planes:
            n = np.asarray(n, dtype=np.float64).reshape(3)
            if abs(np.linalg.norm(n) - 1.0) > 1e-6:
                raise ValueError("plane normal must be unit length")
            planes.append((n, float(d)))
        object.__setattr__(self, "planes", planes)
        for obj, plane, eps in self.os_edges:
            if obj not in self.objects:
                raise ValueError(f"os_edge references unknown object {obj!r}")
            if not (0 <= plane < len(planes)):
                raise ValueError(f"os_edge references unknown plane {plane}")
            if eps <= 0:
                raise ValueError("epsilon must be positive")
        for (a, b), margin in self.oo_edges:
            if a not in self.objects or b not in self.objects:
                raise ValueError(f"oo_edge references unknown object pair ({a}, {b})")
            if margin <= 0:
                raise ValueError("margin must be positive")

    @staticmethod
    def from_json(obj) -> "RelationGraph":
        """Parse the on-disk JSON schema (see save_json)."""
        planes = [(p["n"], p["d"]) for p in obj.get("planes", [])]
        os_edges = [(e["object"], e["plane"], e.get("epsilon", DEFAULT_EPSILON))
                    for e in obj.get("os_edges", [])]
        oo_edges = [(tuple(e["pair"]), e.get("margin", DEFAULT_MARGIN))
                    for e in obj.get("oo_edges", [])]
        objects = obj.get("objects")
        if objects is None:
            objects = sorted({e[0] for e in os_edges}
                             | {o for e in oo_edges for o in e[0]})
        return RelationGraph(list(objects), planes, os_edges, oo_edges)

    @staticmethod
    def load(path) -> "RelationGraph":
        with open(path) as f:
            return RelationGraph.from_json(json.load(f))

    def to_json(self):
        return {
            "objects": list(self.objects),
            "planes": [{"n": list(n), "d": d} for n, d in self.planes],
            "os_edges": [{"object": o, "plane": p, "epsilon": e}
                         for o, p, e in self.os_edges],
            "oo_edges": [{"pair": list(pair), "margin": m}
                         for pair, m in self.oo_edges],
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


# ---------------------------------------------------------------------------
# minimum pairwise distance
# ---------------------------------------------------------------------------

def min_distance_bruteforce(a, b) -> float:
    """O(nm) reference: exact minimum pairwise Euclidean distance."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if a.size == 0 or b.size == 0:
        raise ValueError("min_distance requires nonempty point sets")
    best = np.inf
    # chunk the row set to bound the (n, m) distance matrix memory
    for start in range(0, a.shape[0], 1024):
        chunk = a[start:start + 1024]
        d2 = np.sum((chunk[:, None, :] - b[None, :, :]) ** 2, axis=2)
        best = min(best, float(d2.min()))
    return float(np.sqrt(best))


def _closest_pair_hashed(a, b, radius):
    """Closest pair with distance <= radius, via a uniform grid of cell=radius.

    Returns (d2_min, i, j) or None when no pair lies within radius.
    """
    cells = {}
    keys = np.floor(b / radius).astype(np.int64)
    for j, key in enumerate(map(tuple, keys)):
        cells.setdefault(key, []).append(j)
    best = None
    a_keys = np.floor(a / radius).astype(np.int64)
    for i in range(a.shape[0]):
        ki = a_keys[i]
        cand = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    cand.extend(cells.get((ki[0] + dx, ki[1] + dy, ki[2] + dz), ()))
        if not cand:
            continue
        idx = np.array(cand)
        d2 = np.sum((b[idx] - a[i]) ** 2, axis=1)
        j = int(np.argmin(d2))
        if best is None or d2[j] < best[0]:
            best = (float(d2[j]), i, int(idx[j]))
    return best


def closest_pair(a, b):
    """Exact closest pair between two point sets: (distance, index_a, index_b).

    Uses a uniform spatial hash grid sized by an upper-bound radius from a
    coarse sample, with brute force for small inputs.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if a.size == 0 or b.size == 0:
        raise ValueError("min_distance requires nonempty point sets")
    if a.shape[0] * b.shape[0] <= 4096:
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
        i, j = np.unravel_index(np.argmin(d2), d2.shape)
        return float(np.sqrt(d2[i, j])), int(i), int(j)
    # upper bound on d_min: best distance from a small sample of a into b
    sample = a[:: max(1, a.shape[0] // 32)]
    d2s = np.sum((sample[:, None, :] - b[None, :, :]) ** 2, axis=2)
    radius = float(np.sqrt(d2s.min()))
    if radius == 0.0:
        si, sj = np.unravel_index(np.argmin(d2s), d2s.shape)
        return 0.0, int(si) * max(1, a.shape[0] // 32), int(sj)
    best = _closest_pair_hashed(a, b, radius)
    # guaranteed to exist: the sampled pair itself lies within radius
    d2, i, j = best
    return float(np.sqrt(d2)), i, j


def min_distance(a, b) -> float:
    """Minimum pairwise Euclidean distance between two point sets."""
    return closest_pair(a, b)[0]


def signed_min_distance(a, b):
    """Closest-pair distance with an interpenetration sign.

    The unsigned point-set distance cannot distinguish surfaces that are d
    apart from surfaces that overlap by d, so a hinge on it rewards pushing
    overlapping objects deeper together. Disambiguate with the centroid
    separation axis: when the closest-pair offset points against it the
    surfaces have passed through each other and the distance is reported
    negative. Returns (signed_distance, i, j).
    """
    d, i, j = closest_pair(a, b)
    if d == 0.0:
        return 0.0, i, j
    axis = np.mean(a, axis=0) - np.mean(b, axis=0)
    if float((a[i] - b[j]) @ axis) < 0.0:
        return -d, i, j
    return d, i, j


# ---------------------------------------------------------------------------
# constraint losses
# ---------------------------------------------------------------------------

def contact_set(points, plane, quantile: float = CONTACT_QUANTILE):
    """Indices of the bottom-surface subset: the lowest signed-distance
    quantile of the object's points w.r.t. the support plane."""
    n, d = plane
    s = points @ n + d
    k = max(1, int(np.ceil(quantile * len(s))))
    return np.argsort(s, kind="stable")[:k]


def loss_os(points, contact_idx, plane, epsilon: float) -> float:
    """Two-sided hinge keeping contact points inside the plane's eps slab."""
    n, d = plane
    s = points[contact_idx] @ n + d
    above = np.maximum(0.0, s - epsilon)
    below = np.maximum(0.0, -s - epsilon)
    return float(np.mean(above ** 2 + below ** 2))


def loss_oo(graph: RelationGraph, point_sets: dict) -> float:
    """Sum of squared separation hinges over the graph's object pairs.

    Uses the signed closest-pair distance so overlapping surfaces read as a
    larger violation than touching ones.
    """
    total = 0.0
    for (ida, idb), margin in graph.oo_edges:
        d, _, _ = signed_min_distance(point_sets[ida], point_sets[idb])
        total += max(0.0, margin - d) ** 2
    return float(total)


# ---------------------------------------------------------------------------
# layout refinement
# ---------------------------------------------------------------------------

@dataclass
class LayoutConfig:
    max_iters: int = 500
    step: float = 0.01            # m, initial translation step along -gradient
    w_os: float = 1.0
    w_oo: float = 1.0
    anchor_weight: float = 0.1    # used only when anchor poses are supplied
    os_tol: float = 1e-8
    optimize_rotations: bool = False
    rotation_step: float = 0.01   # rad, used when rotations are optimized


@dataclass
class LayoutResult:
    poses: dict                   # id -> RigidPose
    converged: bool
    iters_used: int
    objective_trace: list = field(default_factory=list)


def _oo_gradients(graph, point_sets, translations):
    """Translation gradients of loss_oo through the closest (or soft-min) pairs."""
    grads = {k: np.zeros(3) for k in translations}
    total = 0.0
    for (ida, idb), margin in graph.oo_edges:
        pa, pb = point_sets[ida], point_sets[idb]
        d, i, j = signed_min_distance(pa, pb)
        total += max(0.0, margin - d) ** 2
        if d >= margin:
            continue
        if abs(d) < 1e-12:
            # coincident closest pair: no usable direction from this pair, fall
            # back to the centroid separation axis
            delta = np.mean(pa, axis=0) - np.mean(pb, axis=0)
            norm = np.linalg.norm(delta)
            direction = delta / norm if norm > 1e-12 else np.array([0.0, 0.0, 1.0])
            grads[ida] += -2.0 * margin * direction
            grads[idb] += 2.0 * margin * direction
            continue
        # soft-min over the k closest pairs tames chattering of the arg min
        direction = _softmin_direction(pa, pb, margin)
        coeff = -2.0 * max(0.0, margin - d)
        grads[ida] += coeff * direction
        grads[idb] += -coeff * direction
    return grads, total


def _softmin_direction(pa, pb, margin, k: int = SOFTMIN_K,
                       temperature: float = SOFTMIN_TEMPERATURE):
    """Soft-min-weighted outward separation direction over the k closest pairs.

    Each pair offset is flipped, if needed, to point along the centroid
    separation axis so interpenetrating pairs still push the objects apart.
    """
    if pa.shape[0] * pb.shape[0] <= 250_000:
        d2 = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=2)
        flat = d2.ravel()
        k = min(k, flat.size)
        idx = np.argpartition(flat, k - 1)[:k]
        ii, jj = np.unravel_index(idx, d2.shape)
    else:
        # restrict to pairs near the single closest one
        _, i0, j0 = closest_pair(pa, pb)
        near_a = np.argsort(np.sum((pa - pa[i0]) ** 2, axis=1))[:64]
        near_b = np.argsort(np.sum((pb - pb[j0]) ** 2, axis=1))[:64]
        d2 = np.sum((pa[near_a, None, :] - pb[None, near_b, :]) ** 2, axis=2)
        flat = d2.ravel()
        k = min(k, flat.size)
        idx = np.argpartition(flat, k - 1)[:k]
        ii, jj = np.unravel_index(idx, d2.shape)
        ii, jj = near_a[ii], near_b[jj]
    dists = np.sqrt(np.sum((pa[ii] - pb[jj]) ** 2, axis=1))
    w = np.exp(-(dists - dists.min()) / temperature)
    w /= w.sum()
    diffs = pa[ii] - pb[jj]
    axis = np.mean(pa, axis=0) - np.mean(pb, axis=0)
    flip = (diffs @ axis) < 0.0
    diffs[flip] *= -1.0
    norms = np.linalg.norm(diffs, axis=1)
    ok = norms > 1e-12
    dirs = np.zeros_like(diffs)
    dirs[ok] = diffs[ok] / norms[ok, None]
    direction = (w[:, None] * dirs).sum(axis=0)
    nd = np.linalg.norm(direction)
    if nd > 1e-12:
        direction = direction / nd
    return direction


def _os_gradients(graph, point_sets, translations):
    grads = {k: np.zeros(3) for k in translations}
    total = 0.0
    for obj, plane_idx, eps in graph.os_edges:
        pts = point_sets[obj]
        plane = graph.planes[plane_idx]
        idx = contact_set(pts, plane)
        n, d = plane
        s = pts[idx] @ n + d
        above = np.maximum(0.0, s - eps)
        below = np.maximum(0.0, -s - eps)
        total += float(np.mean(above ** 2 + below ** 2))
        g = 2.0 * np.mean(above - below) * n
        grads[obj] += g
    return grads, total


def refine_layout(objects, graph: RelationGraph, anchor=None,
                  config: LayoutConfig = None) -> LayoutResult:
    """Jointly translate object poses until the relation-graph constraints hold.

    objects: dict id -> (SplatCloud, RigidPose). anchor: optional dict
    id -> RigidPose penalizing squared deviation (weight config.anchor_weight).
    Returns refined poses plus a convergence flag; on no edges the input poses
    come back unchanged.
    """
    config = config or LayoutConfig()
    poses = {k: p for k, (_, p) in objects.items()}
    if not graph.os_edges and not graph.oo_edges:
        return LayoutResult(poses, converged=True, iters_used=0)

    base_points = {k: cloud.centroids for k, (cloud, _) in objects.items()}
    rot_mats = {k: p.rotation_matrix() for k, p in poses.items()}
    translations = {k: p.translation.copy() for k, p in poses.items()}

    def points_for(trans):
        return {k: base_points[k] @ rot_mats[k].T + trans[k]
                for k in base_points}

    def objective(trans):
        pts = points_for(trans)
        val = config.w_oo * loss_oo(graph, pts)
        for obj, plane_idx, eps in graph.os_edges:
            plane = graph.planes[plane_idx]
            idx = contact_set(pts[obj], plane)
            val += config.w_os * loss_os(pts[obj], idx, plane, eps)
        if anchor is not None:
            for k, p0 in anchor.items():
                val += config.anchor_weight * float(
                    np.sum((trans[k] - p0.translation) ** 2))
        return val

    step = config.step
    trace = [objective(translations)]
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        pts = points_for(translations)
        g_oo, v_oo = _oo_gradients(graph, pts, translations)
        g_os, v_os = _os_gradients(graph, pts, translations)
        grads = {k: config.w_oo * g_oo[k] + config.w_os * g_os[k]
                 for k in translations}
        if anchor is not None:
            for k, p0 in anchor.items():
                grads[k] += 2.0 * config.anchor_weight * (
                    translations[k] - p0.translation)
        gnorm = np.sqrt(sum(float(g @ g) for g in grads.values()))
        if v_oo == 0.0 and v_os < config.os_tol and (anchor is None or gnorm < 1e-10):
            converged = True
            break
        if gnorm < 1e-14:
            break
        current = trace[-1]
        accepted = False
        trial_step = step
        for _ in range(20):
            trial = {k: translations[k] - trial_step * grads[k] / gnorm
                     for k in translations}
            val = objective(trial)
            if val < current:
                translations = trial
                trace.append(val)
                accepted = True
                # gentle growth so the descent is not locked to a tiny step
                step = min(trial_step * 1.5, config.step)
                break
            trial_step *= 0.5
        if not accepted:
            break
        v = trace[-1]
        if v == 0.0:
            converged = True
            break
    # final feasibility check
    pts = points_for(translations)
    feasible = loss_oo(graph, pts) == 0.0
    for obj, plane_idx, eps in graph.os_edges:
        plane = graph.planes[plane_idx]
        idx = contact_set(pts[obj], plane)
        feasible = feasible and loss_os(pts[obj], idx, plane, eps) < config.os_tol
    out = {k: RigidPose(poses[k].rotation, translations[k]) for k in poses}
    return LayoutResult(out, converged=converged or feasible, iters_used=it,
                        objective_trace=trace)
