"""Spatial/temporal downsampling and the fidelity / complexity metrics.

The fidelity metric compares two particle states of possibly different
particle counts by rasterizing both to the same grid (normalized mass
fields), so a reduced-resolution rollout can be scored against full-
resolution ground truth.  The complexity signal is the mean per-particle
cosine similarity between two consecutive windows of acceleration history;
it is what the hybrid safeguard monitors.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import ParticleSet, Trajectory
from .errors import MetricUndefinedError
from .mpm import p2g

# Particles whose reference acceleration is shorter than this are skipped by
# the relative error metric (resting particles would blow up the ratio).
ACCEL_FLOOR = 1e-12

# Cell size of the first merge-bucketing pass; doubled until enough in-cell
# pairs exist to reach the requested count.
MERGE_BUCKET = 1.0 / 32.0


@dataclass(frozen=True)
class ReductionConfig:
    """Spatiotemporal reduction: keep particle_ratio of the particles and
    advance time_stride fine steps per coarse step."""

    particle_ratio: float = 1.0 / 1.75
    time_stride: int = 2

    def __post_init__(self):
        if not 0 < self.particle_ratio <= 1:
            raise ValueError("particle_ratio must lie in (0, 1]")
        if self.time_stride < 1 or int(self.time_stride) != self.time_stride:
            raise ValueError("time_stride must be a positive integer")


def downsample_particles(particles: ParticleSet, particle_ratio: float) -> ParticleSet:
    """Merge particles down to round(ratio * N) by greedy nearest-pair fusion.

    Particles are bucketed into cells; within each cell the closest pair is
    merged (mass-weighted position/velocity, summed mass) until the global
    count is reached, coarsening the buckets if a pass runs out of pairs.
    Deterministic given input order; conserves total mass and momentum
    exactly.
    """
    if not 0 < particle_ratio <= 1:
        raise ValueError("particle_ratio must lie in (0, 1]")
    n = particles.n
    if n == 0 or particle_ratio == 1.0:
        return particles.copy()
    target = int(round(particle_ratio * n))
    if target == 0:
        raise ValueError(f"particle_ratio {particle_ratio} would merge all "
                         f"{n} particles away")
    out = particles.copy()
    alive = np.ones(n, dtype=bool)
    weighted = {
        "positions": out.positions * out.masses[:, None],
        "velocities": out.velocities * out.masses[:, None],
        "deformation": out.deformation * out.masses[:, None, None],
        "affine": out.affine * out.masses[:, None, None],
    }
    remaining = n
    bucket = MERGE_BUCKET
    while remaining > target and bucket < 4.0:
        keys = np.floor(out.positions / bucket).astype(np.int64)
        order = np.lexsort(keys.T[::-1])
        cells: dict[tuple, list] = {}
        for idx in order:
            if alive[idx]:
                cells.setdefault(tuple(keys[idx]), []).append(idx)
        for members in cells.values():
            members = list(members)
            while remaining > target and len(members) >= 2:
                pts = out.positions[members]
                diff = pts[:, None, :] - pts[None, :, :]
                dist = (diff ** 2).sum(axis=-1)
                np.fill_diagonal(dist, np.inf)
                a, b = np.unravel_index(np.argmin(dist), dist.shape)
                keep, drop = sorted((members[a], members[b]))
                mass = out.masses[keep] + out.masses[drop]
                for name, acc in weighted.items():
                    acc[keep] = acc[keep] + acc[drop]
                    getattr(out, name)[keep] = acc[keep] / mass
                out.masses[keep] = mass
                alive[drop] = False
                members.remove(drop)
                remaining -= 1
            if remaining <= target:
                break
        bucket *= 2.0
    return ParticleSet(
        positions=out.positions[alive],
        velocities=out.velocities[alive],
        masses=out.masses[alive],
        material_ids=out.material_ids[alive],
        deformation=out.deformation[alive],
        affine=out.affine[alive],
    )


def temporal_stride(traj: Trajectory, time_stride: int) -> Trajectory:
    """Keep frames 0, s, 2s, ...; recompute velocities by finite differences.

    The kept trajectory's dt is s times the original dt.  Frame 0 takes the
    forward difference so a constant-velocity trajectory reproduces its own
    velocity exactly.
    """
    if time_stride < 1 or int(time_stride) != time_stride:
        raise ValueError("time_stride must be a positive integer")
    if time_stride == 1:
        return Trajectory(dt=traj.dt, positions=traj.positions.copy(),
                          material_ids=traj.material_ids.copy(),
                          velocities=None if traj.velocities is None
                          else traj.velocities.copy(),
                          per_step_accels=None if traj.per_step_accels is None
                          else traj.per_step_accels.copy(),
                          mode_log=None if traj.mode_log is None
                          else traj.mode_log.copy(),
                          config=traj.config)
    positions = traj.positions[::time_stride].astype(np.float64)
    dt = traj.dt * time_stride
    velocities = np.zeros_like(positions)
    if len(positions) > 1:
        velocities[1:] = (positions[1:] - positions[:-1]) / dt
        velocities[0] = velocities[1]
    elif traj.velocities is not None:
        velocities[0] = traj.velocities[0]
    return Trajectory(dt=dt, positions=positions,
                      material_ids=traj.material_ids.copy(),
                      velocities=velocities, config=traj.config)


def grid_mass_rmse(pred: ParticleSet, truth: ParticleSet, grid_res: int) -> float:
    """Relative l2 distance between normalized grid mass fields.

    Both states are rasterized to the same grid and each mass field is
    normalized to unit sum, so the metric is invariant to uniform mass
    rescaling and indifferent to particle count.
    """
    if pred.dim != truth.dim:
        raise ValueError("pred and truth must share dimensionality")
    truth_mass = p2g(truth, grid_res).cell_mass
    total = truth_mass.sum()
    if total <= 0:
        raise MetricUndefinedError("truth state carries no mass")
    pred_mass = p2g(pred, grid_res).cell_mass
    pred_total = pred_mass.sum()
    if pred_total <= 0:
        raise MetricUndefinedError("pred state carries no mass")
    truth_norm = truth_mass / total
    pred_norm = pred_mass / pred_total
    return float(np.linalg.norm(pred_norm - truth_norm) / np.linalg.norm(truth_norm))


def particle_accel_rmse(pred_accels: np.ndarray, truth_accels: np.ndarray) -> float:
    """Mean per-particle relative acceleration error.

    Particles with a vanishing reference acceleration are skipped and the
    mean is renormalized over the retained count.
    """
    pred = np.asarray(pred_accels, dtype=float)
    truth = np.asarray(truth_accels, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth accelerations must share shape")
    truth_norm = np.linalg.norm(truth, axis=-1)
    keep = truth_norm >= ACCEL_FLOOR
    if not keep.any():
        raise MetricUndefinedError("all reference accelerations vanish")
    err = np.linalg.norm(pred - truth, axis=-1)
    return float((err[keep] / truth_norm[keep]).mean())


@dataclass
class ComplexityWindow:
    """Ring buffer of per-particle accelerations covering two windows.

    The signal compares the older window-length block against the newer one
    per particle (flattened cosine similarity) and averages over particles.
    It is None until 2 * window entries have been pushed.
    """

    window: int = 10
    history: deque = field(default_factory=deque)

    def __post_init__(self):
        self.history = deque(self.history, maxlen=2 * self.window)

    def push(self, accels: np.ndarray) -> None:
        self.history.append(np.asarray(accels, dtype=float))

    @property
    def ready(self) -> bool:
        return len(self.history) == 2 * self.window

    def reset(self) -> None:
        self.history.clear()

    def signal(self) -> float | None:
        if not self.ready:
            return None
        stacked = np.stack(self.history)  # (2w, N, dim)
        w = self.window
        older = stacked[:w].transpose(1, 0, 2).reshape(stacked.shape[1], -1)
        newer = stacked[w:].transpose(1, 0, 2).reshape(stacked.shape[1], -1)
        dot = (older * newer).sum(axis=1)
        norms = np.linalg.norm(older, axis=1) * np.linalg.norm(newer, axis=1)
        cos = np.ones_like(dot)  # zero blocks count as maximally simple
        nonzero = norms > ACCEL_FLOOR
        cos[nonzero] = dot[nonzero] / norms[nonzero]
        return float(cos.mean())


def complexity_signal(window: ComplexityWindow) -> float | None:
    """Mean cosine similarity between the two halves of the history buffer."""
    return window.signal()
