"""Domain types, scenario setup, and the trajectory persistence format.

Everything downstream (solver, surrogate, hybrid rollout, control) works on
the types defined here.  The simulation domain is always the unit box
``[0, 1]^dim``; obstacle geometry and blob shapes are expressed in those
units.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorruptionError, FormatError

# Blobs must keep this margin from the domain walls so freshly seeded
# particles start outside the grid boundary band.
BLOB_MARGIN = 0.05

# Grid nodes within this many cells of a wall apply the slip condition, and
# particle positions are clamped to the matching band.
BOUNDARY_BAND = 3

TRAJECTORY_MAGIC = b"FLF1"
TRAJECTORY_VERSION = 1
_HEADER = struct.Struct("<4sHBBIIdI")

FLAG_VELOCITIES = 1 << 0
FLAG_ACCELS = 1 << 1
FLAG_MODE_LOG = 1 << 2

MODE_NEURAL = 0
MODE_MPM = 1
MODE_CONTROL = 2
MODE_NAMES = {MODE_NEURAL: "NEURAL", MODE_MPM: "MPM", MODE_CONTROL: "CONTROL"}


class MaterialKind(enum.IntEnum):
    WATER = 0
    SAND = 1
    RIGID_BOUNDARY = 2


@dataclass(frozen=True)
class Material:
    """Constitutive parameters for one material table entry.

    ``eos_stiffness``/``eos_gamma`` drive the weakly compressible water
    equation of state; ``friction_angle`` (radians) the sand yield surface;
    ``youngs_modulus``/``poisson_ratio`` the sand elastic response.
    """

    kind: MaterialKind
    eos_stiffness: float = 400.0
    eos_gamma: float = 3.0
    friction_angle: float = 0.6
    youngs_modulus: float = 5000.0
    poisson_ratio: float = 0.3
    density: float = 1000.0

    def __post_init__(self):
        if self.kind == MaterialKind.WATER and self.eos_stiffness <= 0:
            raise ConfigurationError("water requires eos_stiffness > 0")
        if self.kind == MaterialKind.SAND and not 0 < self.friction_angle < np.pi / 2:
            raise ConfigurationError("sand friction_angle must lie in (0, pi/2)")

    def to_dict(self) -> dict:
        d = {"kind": self.kind.name.lower()}
        for name in ("eos_stiffness", "eos_gamma", "friction_angle",
                     "youngs_modulus", "poisson_ratio", "density"):
            d[name] = getattr(self, name)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Material":
        d = dict(d)
        d["kind"] = MaterialKind[d["kind"].upper()]
        return cls(**d)


WATER = Material(kind=MaterialKind.WATER)
SAND = Material(kind=MaterialKind.SAND, youngs_modulus=5000.0, poisson_ratio=0.3,
                friction_angle=0.6, density=1400.0)


@dataclass
class ParticleSet:
    """State of N simulated particles.

    positions/velocities are (N, dim); masses (N,); material_ids (N,) index
    into a material table; deformation and affine are (N, dim, dim) holding
    the deformation gradient and the APIC velocity-gradient matrix.
    """

    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    material_ids: np.ndarray
    deformation: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        n, dim = self.positions.shape
        if self.velocities.shape != (n, dim):
            raise ConfigurationError("velocities shape mismatch")
        if self.masses.shape != (n,):
            raise ConfigurationError("masses shape mismatch")
        if self.material_ids.shape != (n,):
            raise ConfigurationError("material_ids shape mismatch")
        if self.deformation.shape != (n, dim, dim):
            raise ConfigurationError("deformation shape mismatch")
        if self.affine.shape != (n, dim, dim):
            raise ConfigurationError("affine shape mismatch")
        if n and not (self.masses > 0).all():
            raise ConfigurationError("masses must be strictly positive")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleSet":
        return ParticleSet(
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            masses=self.masses.copy(),
            material_ids=self.material_ids.copy(),
            deformation=self.deformation.copy(),
            affine=self.affine.copy(),
        )

    @classmethod
    def empty(cls, dim: int) -> "ParticleSet":
        return cls.from_arrays(np.zeros((0, dim)), np.zeros((0, dim)),
                               np.zeros(0), np.zeros(0, dtype=np.uint8))

    @classmethod
    def from_arrays(cls, positions, velocities, masses, material_ids) -> "ParticleSet":
        """Build a set with identity deformation and zero affine matrices."""
        positions = np.asarray(positions, dtype=float)
        n, dim = positions.shape
        eye = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
        return cls(
            positions=positions,
            velocities=np.asarray(velocities, dtype=float).reshape(n, dim),
            masses=np.asarray(masses, dtype=float).reshape(n),
            material_ids=np.asarray(material_ids, dtype=np.uint8).reshape(n),
            deformation=eye,
            affine=np.zeros((n, dim, dim)),
        )


@dataclass(frozen=True)
class Blob:
    """Initial particle region: an axis-aligned box or a ball.

    ``size`` is the full side length per axis for boxes and the radius for
    balls.  ``velocity_low``/``velocity_high`` bound the uniform draw of the
    blob's shared initial velocity.
    """

    shape: str  # "box" | "ball"
    center: tuple
    size: tuple  # per-axis extent for box; (radius,) for ball
    material: int = 0
    velocity_low: tuple = ()
    velocity_high: tuple = ()

    def to_dict(self) -> dict:
        return {
            "shape": self.shape, "center": list(self.center), "size": list(self.size),
            "material": self.material, "velocity_low": list(self.velocity_low),
            "velocity_high": list(self.velocity_high),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Blob":
        return cls(shape=d["shape"], center=tuple(d["center"]), size=tuple(d["size"]),
                   material=d.get("material", 0),
                   velocity_low=tuple(d.get("velocity_low", ())),
                   velocity_high=tuple(d.get("velocity_high", ())))


@dataclass(frozen=True)
class HalfPlane:
    """Static obstacle: the half-space behind ``point`` opposite ``normal``.

    Grid nodes with ``(x - point) . normal <= 0`` are treated as inside the
    obstacle.  ``friction`` switches the contact from slip to stick.
    """

    point: tuple
    normal: tuple
    friction: bool = False

    def unit_normal(self) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        return n / np.linalg.norm(n)

    def to_dict(self) -> dict:
        return {"point": list(self.point), "normal": list(self.normal),
                "friction": self.friction}

    @classmethod
    def from_dict(cls, d: dict) -> "HalfPlane":
        return cls(point=tuple(d["point"]), normal=tuple(d["normal"]),
                   friction=d.get("friction", False))


def _default_resolution(dim: int) -> int:
    return 128 if dim == 2 else 64


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    dim: int = 2
    grid_resolution: int = 0  # 0 means per-dim default (128 in 2D, 64 in 3D)
    dt: float = 0.0025
    total_steps: int = 300
    gravity: tuple = (0.0, -9.8)
    obstacles: tuple = ()
    blobs: tuple = ()
    spacing: float = 0.01
    materials: tuple = (WATER, SAND)
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError("dim must be 2 or 3")
        if len(self.gravity) != self.dim:
            raise ConfigurationError("gravity must have one component per axis")
        if self.grid_resolution == 0:
            object.__setattr__(self, "grid_resolution", _default_resolution(self.dim))

    @property
    def cell_width(self) -> float:
        return 1.0 / self.grid_resolution

    def to_dict(self) -> dict:
        return {
            "name": self.name, "dim": self.dim,
            "grid_resolution": self.grid_resolution, "dt": self.dt,
            "total_steps": self.total_steps, "gravity": list(self.gravity),
            "obstacles": [o.to_dict() for o in self.obstacles],
            "blobs": [b.to_dict() for b in self.blobs],
            "spacing": self.spacing,
            "materials": [m.to_dict() for m in self.materials],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            name=d["name"], dim=d["dim"], grid_resolution=d["grid_resolution"],
            dt=d["dt"], total_steps=d["total_steps"], gravity=tuple(d["gravity"]),
            obstacles=tuple(HalfPlane.from_dict(o) for o in d["obstacles"]),
            blobs=tuple(Blob.from_dict(b) for b in d["blobs"]),
            spacing=d["spacing"],
            materials=tuple(Material.from_dict(m) for m in d["materials"]),
            seed=d["seed"],
        )


def _lattice_axis(lo: float, hi: float, spacing: float) -> np.ndarray:
    """Cell-centered lattice sites covering [lo, hi)."""
    count = int(np.floor((hi - lo) / spacing + 1e-9))
    return lo + (np.arange(count) + 0.5) * spacing


def _blob_sites(blob: Blob, dim: int, spacing: float) -> np.ndarray:
    center = np.asarray(blob.center, dtype=float)
    if blob.shape == "box":
        half = np.asarray(blob.size, dtype=float) / 2.0
        axes = [_lattice_axis(c - h, c + h, spacing) for c, h in zip(center, half)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)
    if blob.shape == "ball":
        radius = float(blob.size[0])
        axes = [_lattice_axis(c - radius, c + radius, spacing) for c in center]
        grids = np.meshgrid(*axes, indexing="ij")
        sites = np.stack([g.ravel() for g in grids], axis=1)
        keep = np.linalg.norm(sites - center, axis=1) <= radius
        return sites[keep]
    raise ConfigurationError(f"unknown blob shape {blob.shape!r}")


def _blob_bounds(blob: Blob) -> tuple:
    center = np.asarray(blob.center, dtype=float)
    if blob.shape == "box":
        half = np.asarray(blob.size, dtype=float) / 2.0
    else:
        half = np.full(center.shape, float(blob.size[0]))
    return center - half, center + half


def init_scenario(config: ScenarioConfig) -> ParticleSet:
    """Seed particles on jittered lattices inside the configured blobs.

    Pure function of (config, seed): identical configs produce bit-identical
    particle sets.  Jitter amplitude is 0.25 x spacing, uniform per axis.
    """
    rng = np.random.default_rng(config.seed)
    positions, velocities, masses, mat_ids = [], [], [], []
    for blob in config.blobs:
        lo, hi = _blob_bounds(blob)
        if (lo < BLOB_MARGIN).any() or (hi > 1.0 - BLOB_MARGIN).any():
            raise ConfigurationError(
                f"blob at {blob.center} leaves the [{BLOB_MARGIN}, {1 - BLOB_MARGIN}] margin")
        sites = _blob_sites(blob, config.dim, config.spacing)
        for obstacle in config.obstacles:
            normal = obstacle.unit_normal()
            inside = (sites - np.asarray(obstacle.point)) @ normal <= 0.0
            if inside.any():
                raise ConfigurationError(
                    f"blob at {blob.center} overlaps obstacle at {obstacle.point}")
        jitter = rng.uniform(-0.25, 0.25, size=sites.shape) * config.spacing
        if blob.velocity_low and blob.velocity_high:
            vel = rng.uniform(np.asarray(blob.velocity_low), np.asarray(blob.velocity_high))
        else:
            vel = np.zeros(config.dim)
        material = config.materials[blob.material]
        mass = material.density * config.spacing ** config.dim
        positions.append(sites + jitter)
        velocities.append(np.broadcast_to(vel, sites.shape).copy())
        masses.append(np.full(len(sites), mass))
        mat_ids.append(np.full(len(sites), blob.material, dtype=np.uint8))
    if not positions:
        return ParticleSet.empty(config.dim)
    return ParticleSet.from_arrays(
        np.concatenate(positions), np.concatenate(velocities),
        np.concatenate(masses), np.concatenate(mat_ids))


@dataclass
class Trajectory:
    """Time-ordered particle snapshots plus optional per-step logs.

    positions / velocities are (frames, N, dim) float32; per_step_accels
    holds the external acceleration applied during each step (last row is
    zero padding so the array stays frame-aligned); mode_log is one entry
    per frame after the first.  timing_log is in-memory only.
    """

    dt: float
    positions: np.ndarray
    material_ids: np.ndarray
    velocities: np.ndarray | None = None
    per_step_accels: np.ndarray | None = None
    mode_log: np.ndarray | None = None
    timing_log: list | None = None
    config: ScenarioConfig | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32)
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=np.float32)
            if self.velocities.shape != self.positions.shape:
                raise ConfigurationError("velocities must match positions shape")
        if self.per_step_accels is not None:
            self.per_step_accels = np.asarray(self.per_step_accels, dtype=np.float32)
            if self.per_step_accels.shape != self.positions.shape:
                raise ConfigurationError("per_step_accels must match positions shape")
        if self.mode_log is not None:
            self.mode_log = np.asarray(self.mode_log, dtype=np.uint8)
        if self.config is not None and self.frame_count > self.config.total_steps + 1:
            raise ConfigurationError("more snapshots than total_steps + 1")

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def frame(self, index: int) -> ParticleSet:
        """Materialize one snapshot as a ParticleSet (unit masses if unknown)."""
        vel = (self.velocities[index] if self.velocities is not None
               else np.zeros_like(self.positions[index]))
        return ParticleSet.from_arrays(
            self.positions[index].astype(float), vel.astype(float),
            np.ones(self.n), self.material_ids)


def save_trajectory(traj: Trajectory, path) -> None:
    """Write the little-endian FLF1 binary plus a JSON config sidecar."""
    path = Path(path)
    flags = 0
    if traj.velocities is not None:
        flags |= FLAG_VELOCITIES
    if traj.per_step_accels is not None:
        flags |= FLAG_ACCELS
    if traj.mode_log is not None:
        flags |= FLAG_MODE_LOG
    header = _HEADER.pack(TRAJECTORY_MAGIC, TRAJECTORY_VERSION, traj.dim, 0,
                          traj.n, traj.frame_count, traj.dt, flags)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(traj.material_ids.astype("<u1").tobytes())
        for k in range(traj.frame_count):
            fh.write(traj.positions[k].astype("<f4").tobytes())
            if traj.velocities is not None:
                fh.write(traj.velocities[k].astype("<f4").tobytes())
            if traj.per_step_accels is not None:
                fh.write(traj.per_step_accels[k].astype("<f4").tobytes())
        if traj.mode_log is not None:
            fh.write(traj.mode_log.astype("<u1").tobytes())
    if traj.config is not None:
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(traj.config.to_dict(), indent=2))


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: too short for a trajectory header")
    magic, version, dim, _, n, frames, dt, flags = _HEADER.unpack_from(raw)
    if magic != TRAJECTORY_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != TRAJECTORY_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    arrays_per_frame = 1 + bool(flags & FLAG_VELOCITIES) + bool(flags & FLAG_ACCELS)
    expected = (n + frames * arrays_per_frame * n * dim * 4
                + (frames if flags & FLAG_MODE_LOG else 0))
    if len(raw) - offset != expected:
        raise CorruptionError(f"{path}: payload is {len(raw) - offset} bytes, "
                              f"expected {expected}")
    material_ids = np.frombuffer(raw, dtype="<u1", count=n, offset=offset).copy()
    offset += n
    frame_floats = n * dim

    def take_frame():
        nonlocal offset
        arr = np.frombuffer(raw, dtype="<f4", count=frame_floats, offset=offset)
        offset += frame_floats * 4
        return arr.reshape(n, dim)

    positions = np.empty((frames, n, dim), dtype=np.float32)
    velocities = np.empty((frames, n, dim), dtype=np.float32) if flags & FLAG_VELOCITIES else None
    accels = np.empty((frames, n, dim), dtype=np.float32) if flags & FLAG_ACCELS else None
    for k in range(frames):
        positions[k] = take_frame()
        if velocities is not None:
            velocities[k] = take_frame()
        if accels is not None:
            accels[k] = take_frame()
    mode_log = None
    if flags & FLAG_MODE_LOG:
        mode_log = np.frombuffer(raw, dtype="<u1", count=frames, offset=offset).copy()
    config = None
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        config = ScenarioConfig.from_dict(json.loads(sidecar.read_text()))
    return Trajectory(dt=dt, positions=positions, material_ids=material_ids,
                      velocities=velocities, per_step_accels=accels,
                      mode_log=mode_log, config=config)


# --- Desk-scale scenario presets -------------------------------------------

def _water2d(name: str, total_steps: int, blob_center=(0.45, 0.42), side=0.2,
             velocity=(0.0, 0.0), obstacles=(), seed=0) -> ScenarioConfig:
    blob = Blob(shape="box", center=blob_center, size=(side, side), material=0,
                velocity_low=velocity, velocity_high=velocity)
    return ScenarioConfig(name=name, dim=2, total_steps=total_steps,
                          gravity=(0.0, -9.8), blobs=(blob,), obstacles=tuple(obstacles),
                          spacing=0.01, seed=seed)


def scenario_preset(name: str, **overrides) -> ScenarioConfig:
    """Look up a named desk-scale scenario; overrides replace config fields."""
    if name not in _PRESETS:
        raise ConfigurationError(f"unknown scenario {name!r}; known: {sorted(_PRESETS)}")
    config = _PRESETS[name]()
    return replace(config, **overrides) if overrides else config


def list_scenarios() -> list:
    return sorted(_PRESETS)


_RAMP = HalfPlane(point=(0.55, 0.30), normal=(-0.55, 0.835), friction=False)

_PRESETS = {
    "water2d-desk": lambda: _water2d("water2d-desk", 300),
    "water2d-splash": lambda: _water2d("water2d-splash", 400, blob_center=(0.40, 0.52),
                                       velocity=(0.8, 0.0), seed=3),
    # Benchmark scenario for the error-latency tradeoff: sized so the
    # classical step cost clearly dominates the surrogate's while particle
    # density stays below the engine's neighbor cap.
    "water2d-bench": lambda: ScenarioConfig(
        name="water2d-bench", dim=2, total_steps=240, gravity=(0.0, -9.8),
        blobs=(Blob(shape="box", center=(0.45, 0.34), size=(0.2, 0.2)),),
        spacing=0.009, seed=0),
    "waterramps2d-desk": lambda: _water2d("waterramps2d-desk", 300,
                                          blob_center=(0.35, 0.62), obstacles=(_RAMP,)),
    "freefall2d-desk": lambda: ScenarioConfig(
        name="freefall2d-desk", dim=2, total_steps=100, gravity=(0.0, -9.8),
        blobs=(Blob(shape="box", center=(0.5, 0.78), size=(0.12, 0.12)),),
        spacing=0.012, seed=1),
    "sand2d-desk": lambda: ScenarioConfig(
        name="sand2d-desk", dim=2, total_steps=300, gravity=(0.0, -9.8),
        blobs=(Blob(shape="box", center=(0.5, 0.45), size=(0.16, 0.16), material=1),),
        spacing=0.01, seed=2),
    "water3d-desk": lambda: ScenarioConfig(
        name="water3d-desk", dim=3, total_steps=200, gravity=(0.0, -9.8, 0.0),
        blobs=(Blob(shape="box", center=(0.5, 0.45, 0.5), size=(0.14, 0.14, 0.14)),),
        spacing=0.02, seed=0),
    # Two blobs colliding mid-air: enough internal dynamics to deform the
    # fluid, gentle enough that a reverse-solved field stays trackable.
    "collide2d-desk": lambda: ScenarioConfig(
        name="collide2d-desk", dim=2, total_steps=100, gravity=(0.0, -9.8),
        blobs=(Blob(shape="box", center=(0.40, 0.55), size=(0.08, 0.08),
                    velocity_low=(0.3, -0.05), velocity_high=(0.5, 0.05)),
               Blob(shape="box", center=(0.60, 0.55), size=(0.08, 0.08),
                    velocity_low=(-0.5, -0.05), velocity_high=(-0.3, 0.05))),
        spacing=0.01, seed=0),
}
