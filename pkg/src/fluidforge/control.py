"""Sketch-driven fluid control.

The data path mirrors how control episodes are produced end to end: a
forward rollout is reversed into the per-step external acceleration field
that retraces it ballistically, that field is temporally smoothed, and a
sketch (arrow for motion, oval for a target shape) summarizes the episode
for a user or a learned controller.  A constant-force baseline controller
and a replay controller share one evaluation interface so a future learned
model can drop in without touching the rollout loop.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import BOUNDARY_BAND, ParticleSet, ScenarioConfig, Trajectory
from .errors import (CorruptionError, DegenerateSketchError, FormatError,
                     NonFiniteFieldError)
from .mpm import mpm_step, simulate

CONTROL_STEPS = 100  # MPM steps per control episode

SMOOTH_BLEND = 0.1      # lambda of the acceleration smoothing
SMOOTH_SHARPNESS = 2.0  # beta: cosine sensitivity of the blend

RASTER_SIZE = 128
ARROW_SEGMENTS = 8
ARROW_WIDTH_MIN = 2.0   # px
ARROW_WIDTH_MAX = 10.0  # px

FORCE_FIELD_MAGIC = b"FFF1"
FORCE_FIELD_VERSION = 1
_FF_HEADER = struct.Struct("<4sHBBIIdI")


@dataclass
class ForceField:
    """Per-particle, per-step external accelerations in application order."""

    accels: np.ndarray  # (steps, N, dim)
    dt: float

    def __post_init__(self):
        self.accels = np.asarray(self.accels, dtype=float)
        if self.accels.ndim != 3:
            raise ValueError("accels must be (steps, N, dim)")
        if not np.isfinite(self.accels).all():
            raise NonFiniteFieldError("force field contains non-finite entries")

    @property
    def steps(self) -> int:
        return self.accels.shape[0]

    @property
    def n(self) -> int:
        return self.accels.shape[1]

    @property
    def dim(self) -> int:
        return self.accels.shape[2]


def save_force_field(field_: ForceField, path) -> None:
    header = _FF_HEADER.pack(FORCE_FIELD_MAGIC, FORCE_FIELD_VERSION,
                             field_.dim, 0, field_.n, field_.steps,
                             field_.dt, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(field_.accels.astype("<f4").tobytes())


def load_force_field(path) -> ForceField:
    raw = Path(path).read_bytes()
    if len(raw) < _FF_HEADER.size:
        raise FormatError(f"{path}: too short for a force-field header")
    magic, version, dim, _, n, steps, dt, _ = _FF_HEADER.unpack_from(raw)
    if magic != FORCE_FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORCE_FIELD_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = steps * n * dim * 4
    payload = raw[_FF_HEADER.size:]
    if len(payload) != expected:
        raise CorruptionError(f"{path}: payload is {len(payload)} bytes, "
                              f"expected {expected}")
    accels = np.frombuffer(payload, dtype="<f4").reshape(steps, n, dim)
    return ForceField(accels=accels.astype(float), dt=dt)


# --- reverse simulation ------------------------------------------------------

def reverse_force_field(traj: Trajectory, gravity, dt: float | None = None) -> ForceField:
    """Solve the external accelerations that retrace the trajectory backward.

    Starting from the final frame at rest, a symplectic-Euler rollout under
    (row + gravity) visits the trajectory's positions in reverse order
    exactly; rows are stored in application order (first row reverses the
    last forward step).
    """
    positions = np.asarray(traj.positions, dtype=float)
    if traj.frame_count < 2:
        raise ValueError("need at least two frames to reverse")
    dt = traj.dt if dt is None else dt
    gravity = np.asarray(gravity, dtype=float)
    v_hat = np.zeros_like(positions[0])
    rows = []
    for t in range(traj.frame_count - 1, 0, -1):
        total = ((positions[t - 1] - positions[t]) - v_hat * dt) / dt ** 2
        rows.append(total - gravity)
        v_hat = v_hat + total * dt
    return ForceField(accels=np.stack(rows), dt=dt)


def ballistic_replay(start_positions: np.ndarray, field_: ForceField,
                     gravity) -> np.ndarray:
    """Symplectic-Euler rollout from rest under (field + gravity).

    This is the integrator the reverse solve inverts; it is the oracle for
    the field's defining exactness property.
    """
    gravity = np.asarray(gravity, dtype=float)
    p = np.asarray(start_positions, dtype=float).copy()
    v = np.zeros_like(p)
    frames = [p.copy()]
    for row in field_.accels:
        v = v + (row + gravity) * field_.dt
        p = p + v * field_.dt
        frames.append(p.copy())
    return np.stack(frames)


def smooth_field(field_: ForceField, blend: float = SMOOTH_BLEND,
                 sharpness: float = SMOOTH_SHARPNESS) -> ForceField:
    """One forward smoothing pass toward each acceleration's successor.

    Each step (except the last, which passes through) moves toward its
    successor by blend * exp(-sharpness * cos(a_t, a_t+1)); aligned steps
    barely move, direction reversals get pulled hardest.
    """
    a = field_.accels
    if field_.steps < 2 or blend == 0.0:
        return ForceField(a.copy(), field_.dt)
    head, tail = a[:-1], a[1:]
    dot = (head * tail).sum(axis=-1)
    norms = np.linalg.norm(head, axis=-1) * np.linalg.norm(tail, axis=-1)
    cos = np.ones_like(dot)
    defined = norms > 1e-12
    cos[defined] = dot[defined] / norms[defined]
    coeff = blend * np.exp(-sharpness * cos)
    out = a.copy()
    out[:-1] = head - coeff[..., None] * (head - tail)
    return ForceField(out, field_.dt)


def successor_difference(field_: ForceField) -> float:
    """Sum of squared per-step acceleration jumps (the smoothing target)."""
    diff = field_.accels[:-1] - field_.accels[1:]
    return float((diff ** 2).sum())


# --- sketches ----------------------------------------------------------------

@dataclass
class Sketch:
    """Arrow or oval control sketch plus its deterministic raster."""

    kind: str                      # "arrow" | "oval"
    raster: np.ndarray             # (H, W, 3) float in [0, 1]
    start: np.ndarray | None = None
    end: np.ndarray | None = None
    widths: np.ndarray | None = None   # px per arrow segment
    polyline: np.ndarray | None = None  # (segments + 1, dim) arrow spine
    center: np.ndarray | None = None
    semi_axes: np.ndarray | None = None

    @property
    def target(self) -> np.ndarray:
        """Where the sketch asks the centroid to go."""
        return self.end if self.kind == "arrow" else self.center

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("start", "end", "widths", "polyline", "center", "semi_axes"):
            value = getattr(self, name)
            if value is not None:
                out[name] = np.asarray(value).tolist()
        return out


def _to_pixel(point, size: int):
    # domain (x, y) in [0,1]^2 -> column right, row down
    return (1.0 - point[1]) * (size - 1), point[0] * (size - 1)


def _stamp_disk(img: np.ndarray, row: float, col: float, radius: float) -> None:
    size = img.shape[0]
    r0 = max(int(np.floor(row - radius)), 0)
    r1 = min(int(np.ceil(row + radius)), size - 1)
    c0 = max(int(np.floor(col - radius)), 0)
    c1 = min(int(np.ceil(col + radius)), size - 1)
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            if (r - row) ** 2 + (c - col) ** 2 <= radius * radius:
                img[r, c] = 0.0


def _stamp_segment(img, p0, p1, width_px) -> None:
    size = img.shape[0]
    row0, col0 = _to_pixel(p0, size)
    row1, col1 = _to_pixel(p1, size)
    length = float(np.hypot(row1 - row0, col1 - col0))
    steps = max(int(length * 2), 1)
    radius = max(width_px / 2.0, 0.6)
    for k in range(steps + 1):
        t = k / steps
        _stamp_disk(img, row0 + t * (row1 - row0), col0 + t * (col1 - col0), radius)


def _blank(size: int) -> np.ndarray:
    return np.ones((size, size, 3))


def _rasterize_arrow(polyline, widths, size: int) -> np.ndarray:
    img = _blank(size)
    pts = [np.asarray(p, dtype=float)[:2] for p in polyline]
    for k in range(len(pts) - 1):
        _stamp_segment(img, pts[k], pts[k + 1], widths[k])
    # arrowhead: two barbs scaled by the tip width
    tip, prev = pts[-1], pts[-2]
    direction = tip - prev
    norm = np.linalg.norm(direction)
    if norm > 0:
        direction = direction / norm
        barb_len = 6.0 * max(widths[-1], 2.0) / (size - 1)
        for angle in (2.5, -2.5):
            rot = np.array([[np.cos(angle), -np.sin(angle)],
                            [np.sin(angle), np.cos(angle)]])
            barb = tip + rot @ direction * barb_len
            _stamp_segment(img, tip, barb, widths[-1])
    return img


def _rasterize_oval(center, semi_axes, size: int) -> np.ndarray:
    img = _blank(size)
    a = max(float(semi_axes[0]), 1.0 / size)
    b = max(float(semi_axes[1]), 1.0 / size)
    circumference_px = 2 * np.pi * max(a, b) * size
    count = max(int(circumference_px * 2), 64)
    for theta in np.linspace(0.0, 2 * np.pi, count, endpoint=False):
        point = (center[0] + a * np.cos(theta), center[1] + b * np.sin(theta))
        row, col = _to_pixel(point, size)
        if 0 <= row <= size - 1 and 0 <= col <= size - 1:
            _stamp_disk(img, row, col, 0.8)
    return img


def make_arrow_sketch(source, target_state: ParticleSet | None = None,
                      segments: int = ARROW_SEGMENTS,
                      raster_size: int = RASTER_SIZE) -> Sketch:
    """Arrow from the start centroid to the target centroid.

    ``source`` is either a Trajectory (the arrow follows the centroid path)
    or a start ParticleSet paired with ``target_state`` (straight arrow).
    In 3D, per-segment widths encode depth: the segment nearest the viewer
    (largest z) draws widest.
    """
    if isinstance(source, Trajectory):
        centroids = np.asarray(source.positions, dtype=float).mean(axis=1)
        index = np.linspace(0, len(centroids) - 1, segments + 1).round().astype(int)
        path = centroids[index]
    else:
        if target_state is None:
            raise ValueError("pair form needs a target state")
        start = source.positions.mean(axis=0)
        end = target_state.positions.mean(axis=0)
        path = start + np.linspace(0.0, 1.0, segments + 1)[:, None] * (end - start)
    start, end = path[0], path[-1]
    delta = end - start
    if np.linalg.norm(delta) < 1e-12:
        raise DegenerateSketchError("arrow endpoints coincide")
    dim = path.shape[1]
    if dim == 3:
        seg_z = (path[:-1, 2] + path[1:, 2]) / 2.0
        z_span = seg_z.max() - seg_z.min()
        if z_span < 1e-12:
            widths = np.full(segments, ARROW_WIDTH_MIN)
        else:
            widths = ARROW_WIDTH_MIN + (ARROW_WIDTH_MAX - ARROW_WIDTH_MIN) * (
                (seg_z - seg_z.min()) / z_span)
    else:
        widths = np.full(segments, ARROW_WIDTH_MIN)
    raster = _rasterize_arrow(path, widths, raster_size)
    return Sketch(kind="arrow", raster=raster, start=start.copy(), end=end.copy(),
                  widths=widths, polyline=path.copy())


def make_oval_sketch(target_state: ParticleSet,
                     raster_size: int = RASTER_SIZE) -> Sketch:
    """Axis-aligned ellipse at the target centroid with 2-sigma semi-axes."""
    if target_state.n < 2:
        raise ValueError("oval sketch needs at least two particles")
    positions = target_state.positions
    center = positions.mean(axis=0)
    semi_axes = 2.0 * positions.std(axis=0)
    raster = _rasterize_oval(center, semi_axes, raster_size)
    return Sketch(kind="oval", raster=raster, center=center.copy(),
                  semi_axes=semi_axes.copy())


def fit_sketch_from_stroke(points, raster_size: int = RASTER_SIZE) -> Sketch:
    """Classify a freehand stroke as an oval (closed loop) or an arrow.

    A stroke whose endpoints sit closer than 15% of its arc length is a
    loop: the oval takes the stroke's centroid and twice its per-axis
    spread.  Anything else becomes a straight first-to-last arrow.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise ValueError("stroke needs at least three points")
    arc = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    closure = float(np.linalg.norm(pts[0] - pts[-1]))
    if arc > 0 and closure < 0.15 * arc:
        center = pts.mean(axis=0)
        semi_axes = 2.0 * pts.std(axis=0)
        raster = _rasterize_oval(center, semi_axes, raster_size)
        return Sketch(kind="oval", raster=raster, center=center,
                      semi_axes=semi_axes)
    if np.linalg.norm(pts[-1] - pts[0]) < 1e-12:
        raise DegenerateSketchError("stroke endpoints coincide")
    path = pts[0] + np.linspace(0, 1, ARROW_SEGMENTS + 1)[:, None] * (pts[-1] - pts[0])
    widths = np.full(ARROW_SEGMENTS, ARROW_WIDTH_MIN)
    raster = _rasterize_arrow(path, widths, raster_size)
    return Sketch(kind="arrow", raster=raster, start=pts[0].copy(),
                  end=pts[-1].copy(), widths=widths, polyline=path)


def write_ppm(raster: np.ndarray, path) -> None:
    """Binary P6 dump of a [0,1] float raster, for debugging."""
    h, w, _ = raster.shape
    data = (np.clip(raster, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


# --- controllers -------------------------------------------------------------

@dataclass
class ControllerInput:
    """Everything a per-step controller may condition on."""

    position_history: np.ndarray  # (6, N, dim) most recent last
    velocities: np.ndarray        # (N, dim) current
    sketch: Sketch
    control_step_index: int
    total_steps: int
    dt: float
    gravity: tuple


class Controller:
    """Per-step external acceleration source for a control episode."""

    def evaluate(self, request: ControllerInput) -> np.ndarray:
        raise NotImplementedError


def baseline_controller(state: ParticleSet, sketch: Sketch, total_steps: int,
                        dt: float, gravity) -> ForceField:
    """Spatiotemporally constant field that lands the centroid on the target.

    Under ballistic symplectic Euler the centroid reaches the sketch target
    exactly at the final step; internal forces make it approximate in a
    full rollout.
    """
    gravity = np.asarray(gravity, dtype=float)
    delta = np.asarray(sketch.target, dtype=float) - state.positions.mean(axis=0)
    v0 = state.velocities.mean(axis=0)
    accel = (2.0 * (delta - total_steps * v0 * dt)
             / (dt ** 2 * total_steps * (total_steps + 1)) - gravity)
    accels = np.tile(accel, (total_steps, state.n, 1))
    return ForceField(accels=accels, dt=dt)


class BaselineController(Controller):
    """Adapter: solves the constant field once, then replays its rows."""

    def __init__(self):
        self._field = None

    def evaluate(self, request: ControllerInput) -> np.ndarray:
        if self._field is None or request.control_step_index == 0:
            n = request.position_history.shape[1]
            state = ParticleSet.from_arrays(
                request.position_history[-1], request.velocities,
                np.ones(n), np.zeros(n, dtype=np.uint8))
            self._field = baseline_controller(state, request.sketch,
                                              request.total_steps,
                                              request.dt, request.gravity)
        return self._field.accels[request.control_step_index]


class ReplayController(Controller):
    """Adapter over a precomputed force field."""

    def __init__(self, field_: ForceField):
        self.field = field_

    def evaluate(self, request: ControllerInput) -> np.ndarray:
        return self.field.accels[request.control_step_index]


def controlled_rollout(state: ParticleSet, field_: ForceField,
                       config: ScenarioConfig) -> Trajectory:
    """Run the control episode: field.steps MPM steps under the field."""
    if field_.n != state.n:
        raise ValueError(f"field is for {field_.n} particles, state has {state.n}")
    episode = replace(config, total_steps=field_.steps)
    return simulate(episode, controller_hook=lambda k, _: field_.accels[k],
                    initial_state=state)


def run_controller_episode(state: ParticleSet, controller: Controller,
                           sketch: Sketch, config: ScenarioConfig,
                           total_steps: int = CONTROL_STEPS):
    """Drive a controller step by step through MPM; returns (Trajectory,
    ForceField) with the rows the controller actually produced."""
    particles = state.copy()
    history = [particles.positions.copy()] * 6
    frames = [particles.positions.copy()]
    velocities = [particles.velocities.copy()]
    rows = []
    for step in range(total_steps):
        request = ControllerInput(
            position_history=np.stack(history[-6:]),
            velocities=particles.velocities.copy(), sketch=sketch,
            control_step_index=step, total_steps=total_steps,
            dt=config.dt, gravity=config.gravity)
        row = np.asarray(controller.evaluate(request), dtype=float)
        if row.shape != particles.positions.shape:
            raise ValueError("controller returned a misshapen acceleration row")
        if not np.isfinite(row).all():
            raise NonFiniteFieldError("controller produced non-finite accelerations")
        rows.append(row)
        particles = mpm_step(particles, config, external_accel=row)
        history.append(particles.positions.copy())
        frames.append(particles.positions.copy())
        velocities.append(particles.velocities.copy())
    traj = Trajectory(dt=config.dt, positions=np.stack(frames),
                      material_ids=particles.material_ids,
                      velocities=np.stack(velocities))
    return traj, ForceField(accels=np.stack(rows), dt=config.dt)


# --- episode generation ------------------------------------------------------

def forward_episode(config: ScenarioConfig, total_steps: int = CONTROL_STEPS):
    """Forward rollout plus its final state at rest (the control start).

    The reverse solve assumes the episode starts from rest, so the final
    state's velocities are zeroed before control.
    """
    episode = replace(config, total_steps=total_steps)
    from .core import init_scenario
    particles = init_scenario(episode)
    frames = [particles.positions.copy()]
    vels = [particles.velocities.copy()]
    for _ in range(total_steps):
        particles = mpm_step(particles, episode)
        frames.append(particles.positions.copy())
        vels.append(particles.velocities.copy())
    traj = Trajectory(dt=episode.dt, positions=np.stack(frames),
                      material_ids=particles.material_ids,
                      velocities=np.stack(vels), config=episode)
    start = particles.copy()
    start.velocities[:] = 0.0
    return traj, start


def control_comparison(config: ScenarioConfig, episodes: int,
                       total_steps: int = CONTROL_STEPS,
                       seed0: int = 100) -> list[dict]:
    """Reverse-solved (smoothed) field vs the constant-force baseline.

    Each episode reverses a fresh forward rollout; both controllers then
    steer the same start state toward the forward initial shape through
    full MPM, scored by final grid mass RMSE against that target.
    """
    from .hybrid import metric_resolution
    from .resolution import grid_mass_rmse
    rows = []
    for episode in range(episodes):
        scenario = replace(config, seed=seed0 + episode)
        traj, start, field_, sketch = generate_control_episode(
            scenario, total_steps=total_steps, sketch_kind="arrow")
        target = traj.frame(0)
        res = metric_resolution(scenario)
        ours = controlled_rollout(start, field_, scenario)
        ours_rmse = grid_mass_rmse(ours.frame(-1), target, res)
        base_field = baseline_controller(start, sketch, total_steps,
                                         scenario.dt, scenario.gravity)
        base = controlled_rollout(start, base_field, scenario)
        base_rmse = grid_mass_rmse(base.frame(-1), target, res)
        rows.append({"episode": episode, "seed": scenario.seed,
                     "reverse_rmse": ours_rmse, "baseline_rmse": base_rmse})
    return rows


def generate_control_episode(config: ScenarioConfig,
                             total_steps: int = CONTROL_STEPS,
                             sketch_kind: str = "arrow",
                             smooth: bool = True):
    """One (forward trajectory, solved field, sketch) training triplet.

    The field reverses the forward rollout (so the control target is the
    forward initial state); the sketch depicts that reversed motion.
    """
    traj, start = forward_episode(config, total_steps)
    field_ = reverse_force_field(traj, config.gravity)
    if smooth:
        field_ = smooth_field(field_)
    target = traj.frame(0)
    if sketch_kind == "arrow":
        sketch = make_arrow_sketch(start, target)
    elif sketch_kind == "oval":
        sketch = make_oval_sketch(target)
    else:
        raise ValueError(f"unknown sketch kind {sketch_kind!r}")
    return traj, start, field_, sketch
