"""Safeguarded hybrid rollout: fast path with automatic MPM fallback.

The rollout advances in coarse steps (time_stride fine steps each) on a
particle set downsampled once at t = 0.  A complexity window watches the
per-particle accelerations the active path produces; when the mean cosine
similarity between consecutive acceleration windows drops below the
threshold, the rollout falls back to MPM at the same reduced particle
count.  The MPM segment lasts at least ``fallback_hold`` coarse steps and
hands control back only after the signal has stayed above threshold for a
full window, at which point the surrogate's input history is rebuilt from
the MPM frames.
"""

from __future__ import annotations

import csv
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import (MODE_MPM, MODE_NEURAL, ParticleSet, ScenarioConfig,
                   Trajectory, init_scenario)
from .errors import NonFiniteFieldError
from .mpm import BOUNDARY_BAND, mpm_step
from .neural import (HISTORY_FRAMES, SurrogateWeights, assemble_features,
                     check_compatible, forward, integrate)
from .resolution import (ComplexityWindow, ReductionConfig,
                         downsample_particles, grid_mass_rmse)

# Degree cap for the surrogate's input graph: keeps a degenerate over-dense
# state from inflating the per-step cost quadratically.  Healthy desk states
# sit far below it.
MAX_NEIGHBORS = 12


@dataclass(frozen=True)
class HybridConfig:
    """Safeguard parameters; ``fast_path=None`` selects coarse MPM."""

    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    fallback_threshold: float = 0.8
    window: int = 10
    fallback_hold: int | None = None  # coarse steps; defaults to 2 * window
    fast_path: SurrogateWeights | None = None

    @property
    def hold(self) -> int:
        return 2 * self.window if self.fallback_hold is None else self.fallback_hold


@dataclass
class HybridReport:
    trajectory: Trajectory
    mpm_fraction: float
    mean_step_latency: float
    grid_rmse_curve: np.ndarray | None = None

    @property
    def step_modes(self) -> np.ndarray:
        """Mode per coarse step (the frame-aligned log minus its padding row)."""
        return self.trajectory.mode_log[1:]


def should_fallback(signal: float | None, threshold: float) -> bool:
    """Fall back only on a ready signal strictly below the threshold."""
    return signal is not None and signal < threshold


class HybridEngine:
    """Stepwise hybrid rollout, usable standalone or by the session service."""

    def __init__(self, config: ScenarioConfig, hconfig: HybridConfig,
                 particles: ParticleSet | None = None):
        if hconfig.fast_path is not None:
            check_compatible(hconfig.fast_path, config.dim)
        self.config = config
        self.hconfig = hconfig
        if particles is None:
            particles = init_scenario(config)
        self.particles = downsample_particles(particles,
                                              hconfig.reduction.particle_ratio)
        self.coarse_dt = config.dt * hconfig.reduction.time_stride
        self.window = ComplexityWindow(window=hconfig.window)
        self.in_fallback = False
        self.fallback_steps = 0
        self.calm_streak = 0
        self.band = BOUNDARY_BAND / config.grid_resolution
        self.history: deque = deque(maxlen=HISTORY_FRAMES)
        self._seed_history()
        self.mode_log: list[int] = []
        self.timing_log: list[float] = []
        self.frames = [self.particles.positions.copy()]
        self.frame_velocities = [self.particles.velocities.copy()]
        if hconfig.fast_path is not None:
            self._warm_up()

    def _warm_up(self) -> None:
        # One discarded inference populates the reduced-precision parameter
        # cache and any lazy library state, keeping one-time initialization
        # out of the per-step latency log.
        weights = self.hconfig.fast_path
        batch = assemble_features(np.stack(self.history),
                                  self.particles.material_ids, weights.stats,
                                  self.coarse_dt, weights.config.radius,
                                  wall_margin=self.band,
                                  max_degree=MAX_NEIGHBORS)
        forward(weights, batch, dtype=np.float32)

    def _seed_history(self) -> None:
        # Backward constant-velocity extrapolation gives the surrogate a
        # valid 6-frame history from the very first coarse step.
        p, v = self.particles.positions, self.particles.velocities
        self.history.clear()
        for k in range(HISTORY_FRAMES - 1, -1, -1):
            self.history.append(p - k * self.coarse_dt * v)

    def _mpm_coarse_step(self) -> np.ndarray:
        """time_stride fine MPM substeps; returns the coarse acceleration."""
        v_before = self.particles.velocities.copy()
        for _ in range(self.hconfig.reduction.time_stride):
            self.particles = mpm_step(self.particles, self.config)
        return (self.particles.velocities - v_before) / self.coarse_dt

    def _neural_coarse_step(self) -> np.ndarray:
        weights = self.hconfig.fast_path
        batch = assemble_features(np.stack(self.history),
                                  self.particles.material_ids, weights.stats,
                                  self.coarse_dt, weights.config.radius,
                                  wall_margin=self.band,
                                  max_degree=MAX_NEIGHBORS)
        accel = forward(weights, batch, dtype=np.float32)
        if not np.isfinite(accel).all():
            raise NonFiniteFieldError("surrogate produced non-finite accelerations")
        v_before = self.particles.velocities
        positions, velocities = integrate(
            self.particles.positions, v_before, accel,
            self.coarse_dt, lower=self.band, upper=1.0 - self.band)
        clamped_low = positions <= self.band
        clamped_high = positions >= 1.0 - self.band
        velocities[clamped_low] = np.maximum(velocities[clamped_low], 0.0)
        velocities[clamped_high] = np.minimum(velocities[clamped_high], 0.0)
        self.particles.positions = positions
        realized = (velocities - v_before) / self.coarse_dt
        self.particles.velocities = velocities
        # The window sees the realized (post-clamp) acceleration, the same
        # finite-difference definition the MPM branch uses; accelerations
        # are a property of the motion, not of the predictor.
        return realized

    def coarse_step(self) -> int:
        """Advance one coarse step; returns the mode used (MODE_* constant)."""
        started = time.perf_counter()
        if not self.in_fallback and should_fallback(
                self.window.signal(), self.hconfig.fallback_threshold):
            self.in_fallback = True
            self.fallback_steps = 0
            self.calm_streak = 0
        use_mpm = self.in_fallback or self.hconfig.fast_path is None
        if use_mpm:
            accel = self._mpm_coarse_step()
        else:
            accel = self._neural_coarse_step()
        self.window.push(accel)
        self.history.append(self.particles.positions.copy())
        mode = MODE_MPM if self.in_fallback else MODE_NEURAL
        if self.in_fallback:
            self.fallback_steps += 1
            signal = self.window.signal()
            if signal is not None and signal >= self.hconfig.fallback_threshold:
                self.calm_streak += 1
            else:
                self.calm_streak = 0
            if (self.fallback_steps >= self.hconfig.hold
                    and self.calm_streak >= self.hconfig.window):
                self.in_fallback = False
        self.timing_log.append(time.perf_counter() - started)
        self.mode_log.append(mode)
        self.frames.append(self.particles.positions.copy())
        self.frame_velocities.append(self.particles.velocities.copy())
        return mode

    def trajectory(self) -> Trajectory:
        modes = np.asarray(self.mode_log, dtype=np.uint8)
        padded = (np.concatenate([modes[:1], modes]) if len(modes)
                  else np.zeros(1, dtype=np.uint8))
        return Trajectory(dt=self.coarse_dt, positions=np.stack(self.frames),
                          material_ids=self.particles.material_ids,
                          velocities=np.stack(self.frame_velocities),
                          mode_log=padded, timing_log=list(self.timing_log))


def metric_resolution(config: ScenarioConfig) -> int:
    """Grid used for fidelity scoring.

    Desk scenarios carry two orders of magnitude fewer particles than the
    solver grid was sized for; scoring on the full grid makes even nearly
    identical states look disjoint cell-by-cell.  A quarter-resolution
    metric grid restores a particle-per-cell density comparable to the
    full-scale setting.
    """
    return max(config.grid_resolution // 4, 16)


def hybrid_rollout(config: ScenarioConfig, hconfig: HybridConfig,
                   ground_truth: Trajectory | None = None,
                   metric_res: int | None = None) -> HybridReport:
    """Roll the hybrid out over the whole scenario.

    When a fine-resolution ground truth trajectory is supplied, the grid
    mass RMSE is evaluated after every coarse step at the matching fine
    frame index (metric time is excluded from the latency log).
    """
    stride = hconfig.reduction.time_stride
    coarse_steps = config.total_steps // stride
    engine = HybridEngine(config, hconfig)
    if metric_res is None:
        metric_res = metric_resolution(config)
    rmse = [] if ground_truth is not None else None
    for k in range(coarse_steps):
        engine.coarse_step()
        if rmse is not None:
            fine_index = (k + 1) * stride
            rmse.append(grid_mass_rmse(engine.particles,
                                       ground_truth.frame(fine_index),
                                       metric_res))
    modes = np.asarray(engine.mode_log)
    return HybridReport(
        trajectory=engine.trajectory(),
        mpm_fraction=float((modes == MODE_MPM).mean()) if len(modes) else 0.0,
        mean_step_latency=float(np.mean(engine.timing_log)) if engine.timing_log else 0.0,
        grid_rmse_curve=None if rmse is None else np.asarray(rmse))


def interleaved_reports(config: ScenarioConfig, hconfigs,
                        ground_truth: Trajectory | None = None,
                        metric_res: int | None = None) -> list[HybridReport]:
    """Run several hybrid configs round-robin, one coarse step at a time.

    Wall-clock on shared machines drifts over minutes; advancing all
    rollouts in lockstep exposes every configuration to the same drift, so
    their latency comparison is fair.  Trajectories are identical to
    sequential rollouts (stepping order never enters the dynamics).
    """
    stride = {hc.reduction.time_stride for hc in hconfigs}
    if len(stride) != 1:
        raise ValueError("interleaved configs must share the time stride")
    stride = stride.pop()
    coarse_steps = config.total_steps // stride
    if metric_res is None:
        metric_res = metric_resolution(config)
    engines = [HybridEngine(config, hc) for hc in hconfigs]
    curves = [[] for _ in engines] if ground_truth is not None else None
    for k in range(coarse_steps):
        for slot, engine in enumerate(engines):
            engine.coarse_step()
            if curves is not None:
                curves[slot].append(grid_mass_rmse(
                    engine.particles, ground_truth.frame((k + 1) * stride),
                    metric_res))
    reports = []
    for slot, engine in enumerate(engines):
        modes = np.asarray(engine.mode_log)
        reports.append(HybridReport(
            trajectory=engine.trajectory(),
            mpm_fraction=float((modes == MODE_MPM).mean()),
            mean_step_latency=float(np.mean(engine.timing_log)),
            grid_rmse_curve=None if curves is None else np.asarray(curves[slot])))
    return reports


def tradeoff_sweep(config: ScenarioConfig, hconfigs,
                   ground_truth: Trajectory | None = None) -> list[dict]:
    """One rollout per config; returns plot-ready rows."""
    rows = []
    for hconfig in hconfigs:
        report = hybrid_rollout(config, hconfig, ground_truth)
        row = {
            "rc": hconfig.fallback_threshold,
            "particle_ratio": hconfig.reduction.particle_ratio,
            "time_stride": hconfig.reduction.time_stride,
            "fast_path": "coarse_mpm" if hconfig.fast_path is None else "neural",
            "mpm_fraction": report.mpm_fraction,
            "mean_latency_s": report.mean_step_latency,
            "mean_rmse": (float(report.grid_rmse_curve.mean())
                          if report.grid_rmse_curve is not None else ""),
            "final_rmse": (float(report.grid_rmse_curve[-1])
                           if report.grid_rmse_curve is not None else ""),
        }
        rows.append(row)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_metric_csv(curve, path, metric="grid_mass_rmse") -> None:
    """Per-step metric emission: (step, metric, value) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "metric", "value"])
        for step, value in enumerate(curve):
            writer.writerow([step, metric, value])


def reduced_ground_truth(config: ScenarioConfig,
                         reduction: ReductionConfig) -> Trajectory:
    """Fine-dt MPM rollout of the downsampled initial state."""
    from .mpm import simulate
    particles = downsample_particles(init_scenario(config),
                                     reduction.particle_ratio)
    return simulate(config, initial_state=particles)


def training_samples_for_scenario(config: ScenarioConfig,
                                  reduction: ReductionConfig,
                                  seeds=(0,)) -> list:
    """Supervised pairs from reduced-resolution rollouts of the scenario."""
    from dataclasses import replace

    from .neural import samples_from_trajectory
    from .resolution import temporal_stride
    samples = []
    for seed in seeds:
        fine = reduced_ground_truth(replace(config, seed=seed), reduction)
        coarse = temporal_stride(fine, reduction.time_stride)
        samples.extend(samples_from_trajectory(coarse))
    return samples


def train_surrogate_for_scenario(config: ScenarioConfig,
                                 reduction: ReductionConfig | None = None,
                                 steps: int = 600, lr: float = 3e-4,
                                 arch=None, train_seeds=(0, 1),
                                 train_seed: int = 0) -> SurrogateWeights:
    """Desk-scale surrogate training on reduced rollouts of one scenario."""
    from .neural import (SurrogateConfig, compute_norm_stats, init_weights,
                         train)
    reduction = reduction or ReductionConfig()
    arch = arch or SurrogateConfig.desk(dim=config.dim)
    samples = training_samples_for_scenario(config, reduction, train_seeds)
    stats = compute_norm_stats(samples)
    weights = init_weights(arch, stats, seed=train_seed)
    trained, _ = train(weights, samples, steps=steps, lr=lr, seed=train_seed)
    return trained


def complexity_error_samples(config: ScenarioConfig, hconfig: HybridConfig,
                             ground_truth: Trajectory,
                             horizon: int | None = None) -> list[tuple]:
    """(signal, mean future grid RMSE) pairs from a pure fast-path rollout.

    The fast path runs without fallback; at every coarse step with a ready
    complexity signal, the signal is paired with the mean grid RMSE over
    the next ``horizon`` coarse steps (default: the window length).  These
    pairs feed the complexity-vs-error correlation analysis.
    """
    stride = hconfig.reduction.time_stride
    coarse_steps = config.total_steps // stride
    horizon = horizon or hconfig.window
    engine = HybridEngine(config, HybridConfig(
        reduction=hconfig.reduction, fallback_threshold=-np.inf,
        window=hconfig.window, fast_path=hconfig.fast_path))
    metric_res = metric_resolution(config)
    signals, errors = [], []
    for k in range(coarse_steps):
        signals.append(engine.window.signal())
        engine.coarse_step()
        errors.append(grid_mass_rmse(engine.particles,
                                     ground_truth.frame((k + 1) * stride),
                                     metric_res))
    samples = []
    for k, signal in enumerate(signals):
        future = errors[k:k + horizon]
        if signal is not None and len(future) == horizon:
            samples.append((signal, float(np.mean(future))))
    return samples
