"""MLS-MPM solver: p2g / grid update / g2p cycle for water and sand.

Stress application is fused into the particle-to-grid transfer (moving least
squares formulation), with quadratic B-spline weights and APIC affine
velocity matrices.  Water uses a weakly compressible equation of state;
sand uses Drucker-Prager elastoplasticity with a Hencky-strain return
mapping.  All kernels are vectorized numpy; grid scatter uses np.add.at,
which accumulates sequentially and is therefore deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from itertools import product

import numpy as np

from .core import (BOUNDARY_BAND, MaterialKind, ParticleSet, ScenarioConfig,
                   Trajectory, init_scenario)
from .errors import DomainError

# Nodal speeds are capped at one cell per step; beyond that particles tunnel
# through the grid and the explicit integration destabilizes.
CFL_SPEED_CAP = 1.0

# The water pressure law saturates outside this volume-ratio range so a
# one-step interpenetration cannot produce an unbounded stress spike.
WATER_J_RANGE = (0.4, 1.4)

_OFFSETS = {d: np.array(list(product(range(3), repeat=d))) for d in (2, 3)}


@dataclass
class GridField:
    """Background Eulerian grid: nodal mass and momentum."""

    resolution: int
    cell_mass: np.ndarray      # (res,) * dim
    cell_momentum: np.ndarray  # (res,) * dim + (dim,)

    @property
    def dim(self) -> int:
        return self.cell_momentum.shape[-1]

    @property
    def cell_width(self) -> float:
        return 1.0 / self.resolution

    def velocity(self) -> np.ndarray:
        """Nodal velocity, zero where the node carries no mass."""
        v = np.zeros_like(self.cell_momentum)
        np.divide(self.cell_momentum, self.cell_mass[..., None], out=v,
                  where=self.cell_mass[..., None] > 0)
        return v

    @classmethod
    def zeros(cls, resolution: int, dim: int) -> "GridField":
        shape = (resolution,) * dim
        return cls(resolution, np.zeros(shape), np.zeros(shape + (dim,)))


def _spline_weights(positions: np.ndarray, resolution: int):
    """Quadratic B-spline stencil: base node, offset weights, 1D weights.

    The base node is clamped so the 3-node stencil stays on the grid; the
    solver's own positions never hit the clamp (they live inside the
    boundary band), it only matters when rasterizing onto a coarser metric
    grid where a wall-adjacent stencil would poke past the last node.
    """
    x = positions * resolution
    base = np.floor(x - 0.5).astype(np.int64)
    base = np.clip(base, 0, resolution - 3)
    fx = x - base
    w = np.stack([0.5 * (1.5 - fx) ** 2,
                  0.75 - (fx - 1.0) ** 2,
                  0.5 * (fx - 0.5) ** 2])  # (3, N, dim)
    return base, fx, w


def _scatter(particles: ParticleSet, grid_res: int, fused: np.ndarray | None,
             velocity_boost: np.ndarray | None) -> GridField:
    """Scatter mass and momentum w * (m (v + boost) + fused @ dpos) to nodes."""
    dim, n = particles.dim, particles.n
    grid = GridField.zeros(grid_res, dim)
    if n == 0:
        return grid
    pos = particles.positions
    if (pos < 0).any() or (pos > 1).any():
        raise DomainError("particle left the unit domain before p2g")
    base, fx, w = _spline_weights(pos, grid_res)
    dx = 1.0 / grid_res
    vel = particles.velocities if velocity_boost is None else particles.velocities + velocity_boost
    mom = particles.masses[:, None] * vel  # (N, dim)
    mass_flat = grid.cell_mass.reshape(-1)
    mom_flat = grid.cell_momentum.reshape(-1, dim)
    shape = (grid_res,) * dim
    for offset in _OFFSETS[dim]:
        weight = w[offset[0], :, 0]
        for axis in range(1, dim):
            weight = weight * w[offset[axis], :, axis]
        nodes = np.ravel_multi_index(tuple((base + offset).T), shape)
        contrib = weight[:, None] * mom
        if fused is not None:
            dpos = (offset - fx) * dx
            contrib = contrib + weight[:, None] * np.einsum("nij,nj->ni", fused, dpos)
        np.add.at(mass_flat, nodes, weight * particles.masses)
        np.add.at(mom_flat, nodes, contrib)
    return grid


def p2g(particles: ParticleSet, grid_res: int) -> GridField:
    """Transfer mass and APIC momentum (m v + m C dpos) to the grid."""
    fused = particles.masses[:, None, None] * particles.affine if particles.n else None
    return _scatter(particles, grid_res, fused, None)


class _MaterialTable:
    """Per-particle constitutive parameters gathered from the material table."""

    def __init__(self, materials, material_ids: np.ndarray, masses: np.ndarray):
        kinds = np.array([m.kind for m in materials])
        e = np.array([m.youngs_modulus for m in materials])
        nu = np.array([m.poisson_ratio for m in materials])
        ids = material_ids.astype(np.int64)
        self.is_water = kinds[ids] == MaterialKind.WATER
        self.is_sand = kinds[ids] == MaterialKind.SAND
        self.eos_stiffness = np.array([m.eos_stiffness for m in materials])[ids]
        self.eos_gamma = np.array([m.eos_gamma for m in materials])[ids]
        self.mu = (e / (2.0 * (1.0 + nu)))[ids]
        self.lam = (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))[ids]
        sin_phi = np.sin(np.array([m.friction_angle for m in materials]))[ids]
        self.dp_alpha = np.sqrt(2.0 / 3.0) * 2.0 * sin_phi / (3.0 - sin_phi)
        self.volume = masses / np.array([m.density for m in materials])[ids]


def _kirchhoff_stress(particles: ParticleSet, table: _MaterialTable) -> np.ndarray:
    """Per-particle Kirchhoff stress tau (N, dim, dim)."""
    n, dim = particles.n, particles.dim
    tau = np.zeros((n, dim, dim))
    if table.is_water.any():
        f = particles.deformation[table.is_water]
        j = np.linalg.det(f)
        # Saturated Kirchhoff stress: evaluating tau at the clamped volume
        # ratio keeps the restoring force monotone in compression, otherwise
        # a one-step crush (J -> 0) would see a weaker push-back than a mild
        # one (tau = -J p(J) vanishes with J).
        j_p = np.clip(j, *WATER_J_RANGE)
        pressure = table.eos_stiffness[table.is_water] * (
            (1.0 / j_p) ** table.eos_gamma[table.is_water] - 1.0)
        tau[table.is_water] = (-j_p * pressure)[:, None, None] * np.eye(dim)
    if table.is_sand.any():
        f = particles.deformation[table.is_sand]
        u, sig, vt = np.linalg.svd(f)
        eps = np.log(np.clip(sig, 1e-10, None))
        mu = table.mu[table.is_sand][:, None]
        lam = table.lam[table.is_sand][:, None]
        # Hencky: tau = U diag(2 mu eps + lam tr(eps)) U^T
        diag = 2.0 * mu * eps + lam * eps.sum(axis=1, keepdims=True)
        tau[table.is_sand] = np.einsum("nik,nk,njk->nij", u, diag, u)
    return tau


def _project_deformation(f: np.ndarray, f_old: np.ndarray,
                         table: _MaterialTable) -> np.ndarray:
    """Constitutive post-processing of updated deformation gradients.

    Water keeps only its volume ratio (F = J^(1/dim) I), which prevents
    spurious shear accumulation.  Sand applies the Drucker-Prager return
    mapping in Hencky-strain space; the projection only ever shrinks the
    deviatoric part, so deviatoric stress never grows.  Degenerate one-step
    updates (det <= 0, possible when dt * C is large) fall back to the
    previous gradient so determinants stay positive.
    """
    f = f.copy()
    dim = f.shape[-1]
    det = np.linalg.det(f)
    degenerate = det < 1e-4
    f[degenerate] = f_old[degenerate]
    if table.is_water.any():
        # Keep only the volume ratio; true J is preserved so an over-crushed
        # particle remembers it must re-expand.
        j = np.linalg.det(f[table.is_water])
        f[table.is_water] = j[:, None, None] ** (1.0 / dim) * np.eye(dim)
    if table.is_sand.any():
        u, sig, vt = np.linalg.svd(f[table.is_sand])
        eps = np.log(np.clip(sig, 1e-6, 1e6))
        trace = eps.sum(axis=1)
        dev = eps - trace[:, None] / dim
        dev_norm = np.linalg.norm(dev, axis=1)
        mu = table.mu[table.is_sand]
        lam = table.lam[table.is_sand]
        alpha = table.dp_alpha[table.is_sand]
        gap = dev_norm + alpha * trace * (dim * lam + 2.0 * mu) / (2.0 * mu)
        eps_new = eps.copy()
        expanding = trace > 0
        eps_new[expanding] = 0.0
        yielding = (~expanding) & (gap > 0) & (dev_norm > 1e-12)
        scale = np.ones_like(dev_norm)
        scale[yielding] = 1.0 - gap[yielding] / dev_norm[yielding]
        eps_new[yielding] = (trace[:, None] / dim + scale[:, None] * dev)[yielding]
        f[table.is_sand] = np.einsum("nik,nk,nkj->nij", u, np.exp(eps_new), vt)
    return f


def grid_update(grid: GridField, dt: float, gravity, obstacles=()) -> GridField:
    """Apply gravity and boundary/obstacle slip conditions on the grid."""
    res, dim = grid.resolution, grid.dim
    v = grid.velocity()
    occupied = grid.cell_mass > 0
    v[occupied] += dt * np.asarray(gravity, dtype=float)
    if dt > 0:
        speed_cap = CFL_SPEED_CAP / (res * dt)
        speed = np.linalg.norm(v, axis=-1)
        fast = speed > speed_cap
        if fast.any():
            v[fast] *= (speed_cap / speed[fast])[:, None]
    # Domain walls: zero the velocity component pointing out of the box.  The
    # slip band extends two nodes past the particle clamp band so a particle
    # sitting exactly on the clamp plane has a fully constrained stencil and
    # lands softly instead of being stacked by the clamp.
    for axis in range(dim):
        lo = [slice(None)] * dim
        lo[axis] = slice(0, BOUNDARY_BAND + 2)
        hi = [slice(None)] * dim
        hi[axis] = slice(res - BOUNDARY_BAND - 2, res)
        vlo = v[tuple(lo) + (axis,)]
        v[tuple(lo) + (axis,)] = np.maximum(vlo, 0.0)
        vhi = v[tuple(hi) + (axis,)]
        v[tuple(hi) + (axis,)] = np.minimum(vhi, 0.0)
    if obstacles:
        coords = np.stack(np.meshgrid(*([np.arange(res) / res] * dim), indexing="ij"),
                          axis=-1)
        for obstacle in obstacles:
            normal = obstacle.unit_normal()
            inside = (coords - np.asarray(obstacle.point)) @ normal <= 0.0
            vn = v @ normal
            penetrating = inside & (vn < 0.0)
            if obstacle.friction:
                v[penetrating] = 0.0
            else:
                v[penetrating] -= vn[penetrating, None] * normal
    momentum = v * grid.cell_mass[..., None]
    return GridField(res, grid.cell_mass.copy(), momentum)


def g2p(grid: GridField, particles: ParticleSet, dt: float,
        materials=None) -> ParticleSet:
    """Gather velocities/affine matrices, update deformation, advect, clamp."""
    dim, n = particles.dim, particles.n
    out = particles.copy()
    if n == 0:
        return out
    res = grid.resolution
    dx = 1.0 / res
    base, fx, w = _spline_weights(particles.positions, res)
    grid_v = grid.velocity().reshape(-1, dim)
    shape = (res,) * dim
    new_v = np.zeros((n, dim))
    new_c = np.zeros((n, dim, dim))
    for offset in _OFFSETS[dim]:
        weight = w[offset[0], :, 0]
        for axis in range(1, dim):
            weight = weight * w[offset[axis], :, axis]
        nodes = np.ravel_multi_index(tuple((base + offset).T), shape)
        gv = grid_v[nodes]
        dpos = (offset - fx) * dx
        new_v += weight[:, None] * gv
        new_c += weight[:, None, None] * np.einsum("ni,nj->nij", gv, dpos)
    new_c *= 4.0 * res * res  # quadratic B-spline: D_p^{-1} = 4 / dx^2
    eye = np.eye(dim)
    f_new = np.einsum("nij,njk->nik", eye + dt * new_c, out.deformation)
    if materials is not None:
        table = _MaterialTable(materials, out.material_ids, out.masses)
        f_new = _project_deformation(f_new, out.deformation, table)
    out.deformation = f_new
    out.affine = new_c
    band = BOUNDARY_BAND * dx
    advected = particles.positions + dt * new_v
    # A clamped particle also loses its wall-ward velocity component, else the
    # clamp keeps recompressing it and pumps energy into the fluid.
    low, high = advected < band, advected > 1.0 - band
    new_v[low] = np.maximum(new_v[low], 0.0)
    new_v[high] = np.minimum(new_v[high], 0.0)
    out.velocities = new_v
    out.positions = np.clip(advected, band, 1.0 - band)
    return out


def mpm_step(particles: ParticleSet, config: ScenarioConfig,
             external_accel: np.ndarray | None = None) -> ParticleSet:
    """One full p2g -> grid update -> g2p cycle.

    ``external_accel`` (N, dim) enters the p2g momentum as a per-particle
    body force m (v + dt a), which keeps total-mass bookkeeping exact.
    """
    if external_accel is not None:
        external_accel = np.asarray(external_accel, dtype=float)
        if external_accel.shape != particles.positions.shape:
            raise ValueError(
                f"external_accel shape {external_accel.shape} != "
                f"{particles.positions.shape}")
    boost = None if external_accel is None else config.dt * external_accel
    fused = None
    if particles.n:
        table = _MaterialTable(config.materials, particles.material_ids, particles.masses)
        tau = _kirchhoff_stress(particles, table)
        coeff = -config.dt * 4.0 * config.grid_resolution ** 2
        fused = (particles.masses[:, None, None] * particles.affine
                 + coeff * table.volume[:, None, None] * tau)
    grid = _scatter(particles, config.grid_resolution, fused, boost)
    grid = grid_update(grid, config.dt, config.gravity, config.obstacles)
    return g2p(grid, particles, config.dt, config.materials)


def simulate(config: ScenarioConfig, controller_hook=None,
             record_timing: bool = False,
             initial_state: ParticleSet | None = None) -> Trajectory:
    """Roll the scenario out for total_steps and record every frame.

    ``controller_hook(step, particles)`` may return an (N, dim) external
    acceleration for that step, or None.  ``initial_state`` overrides the
    seeded scenario initialization (e.g. to roll out an already-downsampled
    state).  Deterministic for a fixed seed.
    """
    particles = init_scenario(config) if initial_state is None else initial_state.copy()
    positions = [particles.positions.copy()]
    velocities = [particles.velocities.copy()]
    accels = [] if controller_hook is not None else None
    timing = [] if record_timing else None
    for step in range(config.total_steps):
        accel = controller_hook(step, particles) if controller_hook else None
        start = time.perf_counter()
        particles = mpm_step(particles, config, external_accel=accel)
        if record_timing:
            timing.append(time.perf_counter() - start)
        if accels is not None:
            accels.append(np.zeros((particles.n, particles.dim)) if accel is None
                          else np.asarray(accel, dtype=float))
        positions.append(particles.positions.copy())
        velocities.append(particles.velocities.copy())
    per_step = None
    if accels is not None:
        # Zero-pad the final row so the array stays frame-aligned.
        per_step = np.stack(accels + [np.zeros((particles.n, particles.dim))])
    return Trajectory(dt=config.dt, positions=np.stack(positions),
                      material_ids=particles.material_ids,
                      velocities=np.stack(velocities), per_step_accels=per_step,
                      timing_log=timing, config=config)
