"""MLS-MPM multi-object elastic solver.

Quadratic B-spline transfers with APIC affine velocity (inertia coefficient
4/dx^2), fixed-corotated elasticity, half-space colliders, and a user force
schedule (point impulses and per-object force fields). Hot loops are
numba-compiled sequential kernels, so two runs from identical inputs are
bitwise identical.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

MASS_EPSILON = 1e-10
DET_CLAMP = (0.1, 10.0)
BOUNDARY_MARGIN = 2  # grid cells


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# materials and constitutive model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Material:
    youngs_modulus: float = 1e5   # Pa
    poisson_ratio: float = 0.3
    density: float = 1000.0       # kg/m^3
    type: str = "elastic"

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise ValueError("Young's modulus must be positive")
        if not (0.0 < self.poisson_ratio < 0.5):
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if self.type != "elastic":
            raise ValueError(f"unsupported material type {self.type!r}")

    @property
    def mu(self):
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lam(self):
        nu = self.poisson_ratio
        return self.youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


def _inv3_batched(a):
    """Analytic batched 3x3 inverse; returns (inverse, determinant)."""
    c00 = a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1]
    c01 = a[:, 1, 2] * a[:, 2, 0] - a[:, 1, 0] * a[:, 2, 2]
    c02 = a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0]
    det = a[:, 0, 0] * c00 + a[:, 0, 1] * c01 + a[:, 0, 2] * c02
    inv = np.empty_like(a)
    inv[:, 0, 0] = c00
    inv[:, 1, 0] = c01
    inv[:, 2, 0] = c02
    inv[:, 0, 1] = a[:, 0, 2] * a[:, 2, 1] - a[:, 0, 1] * a[:, 2, 2]
    inv[:, 1, 1] = a[:, 0, 0] * a[:, 2, 2] - a[:, 0, 2] * a[:, 2, 0]
    inv[:, 2, 1] = a[:, 0, 1] * a[:, 2, 0] - a[:, 0, 0] * a[:, 2, 1]
    inv[:, 0, 2] = a[:, 0, 1] * a[:, 1, 2] - a[:, 0, 2] * a[:, 1, 1]
    inv[:, 1, 2] = a[:, 0, 2] * a[:, 1, 0] - a[:, 0, 0] * a[:, 1, 2]
    inv[:, 2, 2] = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    return inv / det[:, None, None], det


def polar_rotation(f, max_iters: int = 30, tol: float = 1e-13):
    """Rotation factor of the polar decomposition, batched (n, 3, 3).

    Newton iteration X <- (X + X^-T)/2; quadratically convergent for
    nonsingular input, agrees with the SVD construction to ~1e-14.
    """
    x = np.array(f, dtype=np.float64, copy=True)
    for _ in range(max_iters):
        xi, _ = _inv3_batched(x)
        xn = 0.5 * (x + np.transpose(xi, (0, 2, 1)))
        if np.max(np.abs(xn - x)) < tol:
            return xn
        x = xn
    return x


def fixed_corotated_energy(f, mu, lam):
    """Energy density: mu ||F - R||_F^2 + lam/2 (J - 1)^2 per deformation."""
    f = np.asarray(f, dtype=np.float64).reshape(-1, 3, 3)
    r = polar_rotation(f)
    j = np.linalg.det(f)
    dev = f - r
    return mu * np.einsum("nij,nij->n", dev, dev) + 0.5 * lam * (j - 1.0) ** 2


def fixed_corotated_stress(f, mu, lam):
    """Kirchhoff-style stress tau = P(F) F^T with
    P(F) = 2 mu (F - R) + lam (J - 1) J F^-T."""
    f = np.asarray(f, dtype=np.float64).reshape(-1, 3, 3)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (f.shape[0],))
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (f.shape[0],))
    r = polar_rotation(f)
    finv, det = _inv3_batched(f)
    p = (2.0 * mu[:, None, None] * (f - r)
         + (lam * (det - 1.0) * det)[:, None, None] * np.transpose(finv, (0, 2, 1)))
    return p @ np.transpose(f, (0, 2, 1))


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class MpmParticles:
    positions: np.ndarray          # (n, 3)
    velocities: np.ndarray         # (n, 3)
    masses: np.ndarray             # (n,)
    initial_volumes: np.ndarray    # (n,)
    deformation_gradients: np.ndarray  # (n, 3, 3)
    affine_velocities: np.ndarray  # (n, 3, 3)
    object_ids: np.ndarray         # (n,) int, index into object id list
    mu: np.ndarray                 # (n,) per-particle Lame parameters
    lam: np.ndarray                # (n,)

    def __post_init__(self):
        n = self.positions.shape[0]
        for name in ("velocities", "masses", "initial_volumes",
                     "deformation_gradients", "affine_velocities",
                     "object_ids", "mu", "lam"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"particle array {name} has wrong length")
        if n and (np.min(self.masses) <= 0 or np.min(self.initial_volumes) <= 0):
            raise ValueError("particle masses and volumes must be positive")

    def __len__(self):
        return self.positions.shape[0]


@dataclass
class MpmGrid:
    cell_size: float               # m
    dims: tuple                    # (nx, ny, nz)
    origin: np.ndarray = None      # world position of node (0,0,0)
    masses: np.ndarray = None
    momenta: np.ndarray = None
    velocities: np.ndarray = None

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell size must be positive")
        if self.origin is None:
            self.origin = np.zeros(3)
        self.origin = np.asarray(self.origin, dtype=np.float64)
        nx, ny, nz = self.dims
        self.masses = np.zeros((nx, ny, nz))
        self.momenta = np.zeros((nx, ny, nz, 3))
        self.velocities = np.zeros((nx, ny, nz, 3))

    def clear(self):
        self.masses.fill(0.0)
        self.momenta.fill(0.0)
        self.velocities.fill(0.0)


@dataclass(frozen=True)
class Collider:
    normal: np.ndarray             # unit, pointing out of the obstacle
    offset: float                  # plane: n . x + offset = 0
    condition: str = "separating"  # or "sticky"
    friction: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValueError("collider normal must be unit length")
        if self.condition not in ("sticky", "separating"):
            raise ValueError(f"unknown collider condition {self.condition!r}")
        if not (0.0 <= self.friction <= 1.0):
            raise ValueError("friction must lie in [0, 1]")
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class ForceEvent:
    kind: str                      # "impulse_at_point" or "force_field"
    target_object: int             # object index
    start_frame: int
    end_frame: int
    delta_v: np.ndarray = None     # impulse only
    acceleration: np.ndarray = None  # force field only
    point: np.ndarray = None       # impulse only
    radius: float = 0.0            # impulse only

    def __post_init__(self):
        if self.kind not in ("impulse_at_point", "force_field"):
            raise ValueError(f"unknown force event kind {self.kind!r}")
        if self.start_frame > self.end_frame:
            raise ValueError("start_frame must be <= end_frame")
        if self.kind == "impulse_at_point":
            if self.radius <= 0:
                raise ValueError("impulse radius must be positive")
            object.__setattr__(self, "point",
                               np.asarray(self.point, dtype=np.float64).reshape(3))
            object.__setattr__(self, "delta_v",
                               np.asarray(self.delta_v, dtype=np.float64).reshape(3))
        else:
            object.__setattr__(self, "acceleration",
                               np.asarray(self.acceleration, dtype=np.float64).reshape(3))


@dataclass
class MpmState:
    particles: MpmParticles
    grid: MpmGrid
    object_names: list = field(default_factory=list)
    frame: int = 0


# ---------------------------------------------------------------------------
# numba kernels (sequential: accumulation order is fixed)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _spline_weights(fx):
    # quadratic B-spline weights for offsets 0, 1, 2 from the base node
    w0 = 0.5 * (1.5 - fx) ** 2
    w1 = 0.75 - (fx - 1.0) ** 2
    w2 = 0.5 * (fx - 0.5) ** 2
    return w0, w1, w2


@njit(cache=True)
def _p2g_kernel(pos, vel, mass, bmat, origin, dx, grid_m, grid_mom):
    n = pos.shape[0]
    for p in range(n):
        gx = (pos[p, 0] - origin[0]) / dx
        gy = (pos[p, 1] - origin[1]) / dx
        gz = (pos[p, 2] - origin[2]) / dx
        bx = int(np.floor(gx - 0.5))
        by = int(np.floor(gy - 0.5))
        bz = int(np.floor(gz - 0.5))
        wx = _spline_weights(gx - bx)
        wy = _spline_weights(gy - by)
        wz = _spline_weights(gz - bz)
        for i in range(3):
            for jj in range(3):
                for k in range(3):
                    w = wx[i] * wy[jj] * wz[k]
                    ni, nj, nk = bx + i, by + jj, bz + k
                    # node world position minus particle position
                    ox = (ni * dx + origin[0]) - pos[p, 0]
                    oy = (nj * dx + origin[1]) - pos[p, 1]
                    oz = (nk * dx + origin[2]) - pos[p, 2]
                    wm = w * mass[p]
                    grid_m[ni, nj, nk] += wm
                    grid_mom[ni, nj, nk, 0] += wm * (
                        vel[p, 0] + bmat[p, 0, 0] * ox + bmat[p, 0, 1] * oy + bmat[p, 0, 2] * oz)
                    grid_mom[ni, nj, nk, 1] += wm * (
                        vel[p, 1] + bmat[p, 1, 0] * ox + bmat[p, 1, 1] * oy + bmat[p, 1, 2] * oz)
                    grid_mom[ni, nj, nk, 2] += wm * (
                        vel[p, 2] + bmat[p, 2, 0] * ox + bmat[p, 2, 1] * oy + bmat[p, 2, 2] * oz)


@njit(cache=True)
def _scatter_forces_kernel(pos, tau, vol0, origin, dx, grid_f):
    n = pos.shape[0]
    for p in range(n):
        gx = (pos[p, 0] - origin[0]) / dx
        gy = (pos[p, 1] - origin[1]) / dx
        gz = (pos[p, 2] - origin[2]) / dx
        bx = int(np.floor(gx - 0.5))
        by = int(np.floor(gy - 0.5))
        bz = int(np.floor(gz - 0.5))
        fx, fy, fz = gx - bx, gy - by, gz - bz
        wx = _spline_weights(fx)
        wy = _spline_weights(fy)
        wz = _spline_weights(fz)
        # per-axis weight derivatives, d w / d x = dw/dfx * 1/dx
        dwx = ((fx - 1.5) / dx, -2.0 * (fx - 1.0) / dx, (fx - 0.5) / dx)
        dwy = ((fy - 1.5) / dx, -2.0 * (fy - 1.0) / dx, (fy - 0.5) / dx)
        dwz = ((fz - 1.5) / dx, -2.0 * (fz - 1.0) / dx, (fz - 0.5) / dx)
        for i in range(3):
            for jj in range(3):
                for k in range(3):
                    gradx = dwx[i] * wy[jj] * wz[k]
                    grady = wx[i] * dwy[jj] * wz[k]
                    gradz = wx[i] * wy[jj] * dwz[k]
                    ni, nj, nk = bx + i, by + jj, bz + k
                    # force contribution -V0 tau grad(b)
                    grid_f[ni, nj, nk, 0] -= vol0[p] * (
                        tau[p, 0, 0] * gradx + tau[p, 0, 1] * grady + tau[p, 0, 2] * gradz)
                    grid_f[ni, nj, nk, 1] -= vol0[p] * (
                        tau[p, 1, 0] * gradx + tau[p, 1, 1] * grady + tau[p, 1, 2] * gradz)
                    grid_f[ni, nj, nk, 2] -= vol0[p] * (
                        tau[p, 2, 0] * gradx + tau[p, 2, 1] * grady + tau[p, 2, 2] * gradz)


@njit(cache=True)
def _g2p_kernel(pos, grid_v, origin, dx, out_vel, out_b):
    n = pos.shape[0]
    inv_d = 4.0 / (dx * dx)
    for p in range(n):
        gx = (pos[p, 0] - origin[0]) / dx
        gy = (pos[p, 1] - origin[1]) / dx
        gz = (pos[p, 2] - origin[2]) / dx
        bx = int(np.floor(gx - 0.5))
        by = int(np.floor(gy - 0.5))
        bz = int(np.floor(gz - 0.5))
        wx = _spline_weights(gx - bx)
        wy = _spline_weights(gy - by)
        wz = _spline_weights(gz - bz)
        vx = vy = vz = 0.0
        b00 = b01 = b02 = b10 = b11 = b12 = b20 = b21 = b22 = 0.0
        for i in range(3):
            for jj in range(3):
                for k in range(3):
                    w = wx[i] * wy[jj] * wz[k]
                    ni, nj, nk = bx + i, by + jj, bz + k
                    hx = grid_v[ni, nj, nk, 0]
                    hy = grid_v[ni, nj, nk, 1]
                    hz = grid_v[ni, nj, nk, 2]
                    vx += w * hx
                    vy += w * hy
                    vz += w * hz
                    ox = (ni * dx + origin[0]) - pos[p, 0]
                    oy = (nj * dx + origin[1]) - pos[p, 1]
                    oz = (nk * dx + origin[2]) - pos[p, 2]
                    b00 += w * hx * ox
                    b01 += w * hx * oy
                    b02 += w * hx * oz
                    b10 += w * hy * ox
                    b11 += w * hy * oy
                    b12 += w * hy * oz
                    b20 += w * hz * ox
                    b21 += w * hz * oy
                    b22 += w * hz * oz
        out_vel[p, 0] = vx
        out_vel[p, 1] = vy
        out_vel[p, 2] = vz
        out_b[p, 0, 0] = inv_d * b00
        out_b[p, 0, 1] = inv_d * b01
        out_b[p, 0, 2] = inv_d * b02
        out_b[p, 1, 0] = inv_d * b10
        out_b[p, 1, 1] = inv_d * b11
        out_b[p, 1, 2] = inv_d * b12
        out_b[p, 2, 0] = inv_d * b20
        out_b[p, 2, 1] = inv_d * b21
        out_b[p, 2, 2] = inv_d * b22


@njit(cache=True)
def _mark_influence_kernel(pos, origin, dx, marks):
    n = pos.shape[0]
    for p in range(n):
        bx = int(np.floor((pos[p, 0] - origin[0]) / dx - 0.5))
        by = int(np.floor((pos[p, 1] - origin[1]) / dx - 0.5))
        bz = int(np.floor((pos[p, 2] - origin[2]) / dx - 0.5))
        for i in range(3):
            for jj in range(3):
                for k in range(3):
                    marks[bx + i, by + jj, bz + k] = True


# ---------------------------------------------------------------------------
# transfer operations
# ---------------------------------------------------------------------------

def _check_bounds(particles: MpmParticles, grid: MpmGrid, frame: int = -1):
    dims = np.array(grid.dims)
    gc = (particles.positions - grid.origin) / grid.cell_size
    lo = BOUNDARY_MARGIN
    bad = np.any(gc < lo, axis=1) | np.any(gc > dims - 1 - lo, axis=1)
    if bad.any():
        p = int(np.argmax(bad))
        raise SimulationError(
            f"particle {p} outside the {BOUNDARY_MARGIN}-cell grid margin "
            f"(frame {frame}, position {particles.positions[p]})")


@njit(cache=True)
def _grid_velocity_kernel(grid_m, grid_mom, forces, dt, gravity, extra,
                          has_extra, col_normals, col_offsets, col_sticky,
                          col_friction, origin, dx, margin, vel):
    nx, ny, nz = grid_m.shape
    ncol = col_normals.shape[0]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                m = grid_m[i, j, k]
                if m <= MASS_EPSILON:
                    vel[i, j, k, 0] = 0.0
                    vel[i, j, k, 1] = 0.0
                    vel[i, j, k, 2] = 0.0
                    continue
                vx = grid_mom[i, j, k, 0] / m + dt * (forces[i, j, k, 0] / m + gravity[0])
                vy = grid_mom[i, j, k, 1] / m + dt * (forces[i, j, k, 1] / m + gravity[1])
                vz = grid_mom[i, j, k, 2] / m + dt * (forces[i, j, k, 2] / m + gravity[2])
                if has_extra:
                    vx += dt * extra[i, j, k, 0]
                    vy += dt * extra[i, j, k, 1]
                    vz += dt * extra[i, j, k, 2]
                for c in range(ncol):
                    px = origin[0] + dx * i
                    py = origin[1] + dx * j
                    pz = origin[2] + dx * k
                    s = (col_normals[c, 0] * px + col_normals[c, 1] * py
                         + col_normals[c, 2] * pz + col_offsets[c])
                    if s >= 0.0:
                        continue
                    if col_sticky[c]:
                        vx = 0.0
                        vy = 0.0
                        vz = 0.0
                    else:
                        vn = (vx * col_normals[c, 0] + vy * col_normals[c, 1]
                              + vz * col_normals[c, 2])
                        if vn < 0.0:
                            scale = 1.0 - col_friction[c]
                            vx = (vx - vn * col_normals[c, 0]) * scale
                            vy = (vy - vn * col_normals[c, 1]) * scale
                            vz = (vz - vn * col_normals[c, 2]) * scale
                if (i < margin or i >= nx - margin or j < margin
                        or j >= ny - margin or k < margin or k >= nz - margin):
                    vx = 0.0
                    vy = 0.0
                    vz = 0.0
                vel[i, j, k, 0] = vx
                vel[i, j, k, 1] = vy
                vel[i, j, k, 2] = vz


def p2g(particles: MpmParticles, grid: MpmGrid, frame: int = -1):
    """Scatter particle mass and APIC momentum onto the grid."""
    _check_bounds(particles, grid, frame)
    grid.clear()
    _p2g_kernel(particles.positions, particles.velocities, particles.masses,
                particles.affine_velocities, grid.origin, grid.cell_size,
                grid.masses, grid.momenta)


def grid_update(grid: MpmGrid, particles: MpmParticles, gravity, dt: float,
                colliders=(), extra_accel=None):
    """Momentum -> velocity, apply stress forces + gravity, then boundary
    conditions (domain box is sticky; colliders per their condition)."""
    forces = np.zeros_like(grid.momenta)
    if len(particles):
        tau = fixed_corotated_stress(
            particles.deformation_gradients, particles.mu, particles.lam)
        _scatter_forces_kernel(particles.positions, tau,
                               particles.initial_volumes, grid.origin,
                               grid.cell_size, forces)
    if extra_accel is None:
        extra_accel = np.zeros((1, 1, 1, 3))
        has_extra = False
    else:
        has_extra = True
    ncol = len(colliders)
    col_normals = np.zeros((ncol, 3))
    col_offsets = np.zeros(ncol)
    col_sticky = np.zeros(ncol, dtype=np.bool_)
    col_friction = np.zeros(ncol)
    for c, col in enumerate(colliders):
        col_normals[c] = col.normal
        col_offsets[c] = col.offset
        col_sticky[c] = col.condition == "sticky"
        col_friction[c] = col.friction
    _grid_velocity_kernel(grid.masses, grid.momenta, forces, dt,
                          np.asarray(gravity, dtype=np.float64),
                          extra_accel, has_extra,
                          col_normals, col_offsets, col_sticky, col_friction,
                          grid.origin, grid.cell_size, BOUNDARY_MARGIN,
                          grid.velocities)
    return grid


def g2p(grid: MpmGrid, particles: MpmParticles, dt: float):
    """Gather grid velocities back to particles and advance their state.

    In order: new velocity (PIC gather), position (explicit advection), APIC
    matrix (4/dx^2 first moment), deformation gradient F <- (I + dt B) F with
    a det clamp as a plasticity-style safety (weights and moment offsets both
    use the pre-advection positions)."""
    if len(particles) == 0:
        return particles
    new_v = np.empty_like(particles.velocities)
    new_b = np.empty_like(particles.affine_velocities)
    _g2p_kernel(particles.positions, grid.velocities, grid.origin,
                grid.cell_size, new_v, new_b)
    particles.velocities = new_v
    particles.positions = particles.positions + dt * new_v
    particles.affine_velocities = new_b
    f = (np.eye(3)[None] + dt * new_b) @ particles.deformation_gradients
    det = np.linalg.det(f)
    clamped = np.clip(det, DET_CLAMP[0], DET_CLAMP[1])
    fix = np.cbrt(clamped / det)
    particles.deformation_gradients = f * fix[:, None, None]
    return particles


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def check_cfl(dt, dx, material: Material):
    wave = np.sqrt(material.youngs_modulus / material.density)
    if dt > 0.2 * dx / wave:
        warnings.warn(
            f"dt={dt} exceeds the explicit stability guard 0.2*dx/c = "
            f"{0.2 * dx / wave:.3e}", RuntimeWarning)


def step(state: MpmState, dt: float, gravity, schedule=(), colliders=(),
         frame: int = 0, substep: int = 0):
    """One explicit MPM substep: forces -> P2G -> grid update -> G2P."""
    parts = state.particles

    field_accel = None
    for ev in schedule:
        if not (ev.start_frame <= frame <= ev.end_frame):
            continue
        target = parts.object_ids == ev.target_object
        if ev.kind == "impulse_at_point":
            if frame == ev.start_frame and substep == 0:
                near = (np.linalg.norm(parts.positions - ev.point, axis=1)
                        <= ev.radius) & target
                parts.velocities[near] += ev.delta_v
        else:  # force_field: accelerate nodes influenced by the target object
            if target.any():
                marks = np.zeros(state.grid.dims, dtype=np.bool_)
                _mark_influence_kernel(parts.positions[target],
                                       state.grid.origin,
                                       state.grid.cell_size, marks)
                if field_accel is None:
                    field_accel = np.zeros(state.grid.dims + (3,))
                field_accel[marks] += ev.acceleration

    p2g(parts, state.grid, frame)
    grid_update(state.grid, parts, gravity, dt, colliders,
                extra_accel=field_accel)
    g2p(state.grid, parts, dt)
    return state


@dataclass(frozen=True)
class FrameSnapshot:
    positions: np.ndarray
    velocities: np.ndarray
    deformation_gradients: np.ndarray
    object_ids: np.ndarray
    frame: int


def simulate_frames(state: MpmState, n_frames: int, dt: float, gravity,
                    schedule=(), colliders=(), substeps_per_frame: int = 300):
    """Run the solver, emitting one particle snapshot per frame."""
    if substeps_per_frame < 1:
        raise ValueError("substeps_per_frame must be >= 1")
    snapshots = []
    for frame in range(n_frames):
        for sub in range(substeps_per_frame):
            try:
                step(state, dt, gravity, schedule, colliders,
                     frame=frame, substep=sub)
            except SimulationError as exc:
                raise SimulationError(f"frame {frame}: {exc}") from exc
        snapshots.append(FrameSnapshot(
            positions=state.particles.positions.copy(),
            velocities=state.particles.velocities.copy(),
            deformation_gradients=state.particles.deformation_gradients.copy(),
            object_ids=state.particles.object_ids.copy(),
            frame=frame))
        state.frame = frame + 1
    return snapshots


# ---------------------------------------------------------------------------
# splat cloud -> particle sampling
# ---------------------------------------------------------------------------

def particles_from_clouds(clouds, materials, grid: MpmGrid, fill_factor=0.5,
                          upsample_min_spacing=None, seed=0):
    """One MPM particle per splat centroid for each (already posed) cloud.

    clouds: list of (n, 3) centroid arrays, one per object. materials: matching
    list of Material. V0 = bounding volume * fill_factor / count per object;
    mass = density * V0. Optional Poisson-disk-style upsampling inserts extra
    particles (dart throwing with a minimum spacing) for sparse objects.
    """
    rng = np.random.default_rng(seed)
    pos, vel, mass, vol, oid, mus, lams = [], [], [], [], [], [], []
    for obj_idx, (centroids, material) in enumerate(zip(clouds, materials)):
        pts = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            continue
        if upsample_min_spacing:
            pts = _poisson_upsample(pts, upsample_min_spacing, rng)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extent = np.maximum(hi - lo, grid.cell_size)
        v0 = float(np.prod(extent)) * fill_factor / pts.shape[0]
        pos.append(pts)
        vel.append(np.zeros_like(pts))
        mass.append(np.full(pts.shape[0], material.density * v0))
        vol.append(np.full(pts.shape[0], v0))
        oid.append(np.full(pts.shape[0], obj_idx, dtype=np.int64))
        mus.append(np.full(pts.shape[0], material.mu))
        lams.append(np.full(pts.shape[0], material.lam))
    n = sum(p.shape[0] for p in pos)
    return MpmParticles(
        positions=np.concatenate(pos) if n else np.zeros((0, 3)),
        velocities=np.concatenate(vel) if n else np.zeros((0, 3)),
        masses=np.concatenate(mass) if n else np.zeros(0),
        initial_volumes=np.concatenate(vol) if n else np.zeros(0),
        deformation_gradients=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        affine_velocities=np.zeros((n, 3, 3)),
        object_ids=np.concatenate(oid) if n else np.zeros(0, dtype=np.int64),
        mu=np.concatenate(mus) if n else np.zeros(0),
        lam=np.concatenate(lams) if n else np.zeros(0),
    )


def _poisson_upsample(pts, min_spacing, rng, max_new=2000, tries=4000):
    """Dart-throwing densification inside the object's bounding box."""
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    out = list(pts)
    arr = np.asarray(out)
    added = 0
    for _ in range(tries):
        if added >= max_new:
            break
        cand = rng.uniform(lo, hi)
        d = np.min(np.linalg.norm(arr - cand, axis=1))
        near = np.min(np.linalg.norm(pts - cand, axis=1))
        # stay close to existing geometry but keep Poisson spacing
        if min_spacing <= d and near <= 2.0 * min_spacing:
            out.append(cand)
            arr = np.asarray(out)
            added += 1
    return np.asarray(out)
