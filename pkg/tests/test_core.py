import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluidforge.core import (Blob, HalfPlane, Material, MaterialKind,
                             ScenarioConfig, Trajectory, init_scenario,
                             list_scenarios, load_trajectory, save_trajectory,
                             scenario_preset)
from fluidforge.errors import ConfigurationError, CorruptionError, FormatError


def box_config(**kw):
    defaults = dict(
        name="box", dim=2, total_steps=10, gravity=(0.0, -9.8),
        blobs=(Blob(shape="box", center=(0.5, 0.5), size=(0.2, 0.2)),),
        spacing=0.01, seed=0)
    defaults.update(kw)
    return ScenarioConfig(**defaults)


class TestInitScenario:
    def test_square_blob_particle_count(self):
        # side 0.2 at spacing 0.01 -> 20 x 20 lattice sites
        particles = init_scenario(box_config())
        assert particles.n == 400

    def test_jitter_stays_within_quarter_spacing(self):
        config = box_config()
        particles = init_scenario(config)
        axis = 0.4 + (np.arange(20) + 0.5) * 0.01
        sites = np.stack([g.ravel() for g in np.meshgrid(axis, axis, indexing="ij")], axis=1)
        assert np.abs(particles.positions - sites).max() <= 0.25 * config.spacing

    def test_zero_blobs_gives_empty_set(self):
        particles = init_scenario(box_config(blobs=()))
        assert particles.n == 0

    def test_same_seed_is_bit_identical(self):
        a = init_scenario(box_config(seed=42))
        b = init_scenario(box_config(seed=42))
        assert (a.positions == b.positions).all()
        assert (a.velocities == b.velocities).all()

    def test_different_seed_differs(self):
        a = init_scenario(box_config(seed=1))
        b = init_scenario(box_config(seed=2))
        assert not (a.positions == b.positions).all()

    def test_blob_outside_margin_rejected(self):
        with pytest.raises(ConfigurationError):
            init_scenario(box_config(
                blobs=(Blob(shape="box", center=(0.05, 0.5), size=(0.2, 0.2)),)))

    def test_blob_overlapping_obstacle_rejected(self):
        ramp = HalfPlane(point=(0.5, 0.6), normal=(0.0, 1.0))
        with pytest.raises(ConfigurationError):
            init_scenario(box_config(obstacles=(ramp,)))

    def test_ball_blob_inside_radius(self):
        config = box_config(blobs=(Blob(shape="ball", center=(0.5, 0.5), size=(0.1,)),))
        particles = init_scenario(config)
        assert particles.n > 0
        radii = np.linalg.norm(particles.positions - 0.5, axis=1)
        assert radii.max() <= 0.1 + 0.25 * config.spacing * np.sqrt(2)

    def test_blob_velocity_shared(self):
        config = box_config(blobs=(Blob(shape="box", center=(0.5, 0.5), size=(0.1, 0.1),
                                        velocity_low=(-1, -1), velocity_high=(1, 1)),))
        particles = init_scenario(config)
        assert np.ptp(particles.velocities, axis=0).max() == 0.0


class TestMaterialInvariants:
    def test_water_requires_positive_stiffness(self):
        with pytest.raises(ConfigurationError):
            Material(kind=MaterialKind.WATER, eos_stiffness=0.0)

    def test_sand_friction_angle_range(self):
        with pytest.raises(ConfigurationError):
            Material(kind=MaterialKind.SAND, friction_angle=2.0)


def small_trajectory(frames=3, n=2, dim=2, with_vel=True, with_accel=False,
                     with_modes=False, seed=0):
    rng = np.random.default_rng(seed)
    return Trajectory(
        dt=0.0025,
        positions=rng.uniform(0.1, 0.9, size=(frames, n, dim)).astype(np.float32),
        material_ids=rng.integers(0, 2, size=n).astype(np.uint8),
        velocities=rng.normal(size=(frames, n, dim)).astype(np.float32) if with_vel else None,
        per_step_accels=rng.normal(size=(frames, n, dim)).astype(np.float32) if with_accel else None,
        mode_log=rng.integers(0, 2, size=frames).astype(np.uint8) if with_modes else None,
    )


class TestTrajectoryIO:
    def test_round_trip_field_by_field(self, tmp_path):
        traj = small_trajectory(with_accel=True, with_modes=True)
        path = tmp_path / "t.flf"
        save_trajectory(traj, path)
        back = load_trajectory(path)
        assert (back.positions == traj.positions).all()
        assert (back.velocities == traj.velocities).all()
        assert (back.per_step_accels == traj.per_step_accels).all()
        assert (back.mode_log == traj.mode_log).all()
        assert (back.material_ids == traj.material_ids).all()
        assert back.dt == traj.dt

    def test_config_sidecar_round_trip(self, tmp_path):
        traj = small_trajectory()
        traj.config = box_config(total_steps=5)
        path = tmp_path / "t.flf"
        save_trajectory(traj, path)
        assert (tmp_path / "t.flf.json").exists()
        back = load_trajectory(path)
        assert back.config == traj.config

    def test_wrong_magic_raises_format_error(self, tmp_path):
        path = tmp_path / "bad.flf"
        traj = small_trajectory()
        save_trajectory(traj, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_trajectory(path)

    def test_truncation_raises_corruption_error(self, tmp_path):
        path = tmp_path / "cut.flf"
        save_trajectory(small_trajectory(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(CorruptionError):
            load_trajectory(path)

    def test_file_size_matches_format(self, tmp_path):
        # header 28 bytes + N material ids + frames * (positions+velocities)
        traj = small_trajectory(frames=3, n=2, dim=2, with_vel=True)
        path = tmp_path / "size.flf"
        save_trajectory(traj, path)
        assert path.stat().st_size == 28 + 2 + 3 * (2 * 2 * 2) * 4

    @settings(max_examples=25, deadline=None)
    @given(frames=st.integers(1, 5), n=st.integers(0, 6),
           dim=st.sampled_from([2, 3]), with_vel=st.booleans(),
           with_accel=st.booleans(), with_modes=st.booleans(),
           seed=st.integers(0, 10_000))
    def test_round_trip_property(self, tmp_path_factory, frames, n, dim,
                                 with_vel, with_accel, with_modes, seed):
        traj = small_trajectory(frames, n, dim, with_vel, with_accel,
                                with_modes, seed)
        path = tmp_path_factory.mktemp("rt") / "t.flf"
        save_trajectory(traj, path)
        back = load_trajectory(path)
        assert (back.positions == traj.positions).all()
        for name in ("velocities", "per_step_accels", "mode_log"):
            a, b = getattr(traj, name), getattr(back, name)
            assert (a is None) == (b is None)
            if a is not None:
                assert (a == b).all()

    def test_snapshot_count_invariant(self):
        with pytest.raises(ConfigurationError):
            Trajectory(dt=0.0025,
                       positions=np.zeros((12, 1, 2), dtype=np.float32),
                       material_ids=np.zeros(1, dtype=np.uint8),
                       config=box_config(total_steps=10))


class TestPresets:
    def test_known_presets_exist(self):
        names = list_scenarios()
        assert "water2d-desk" in names and "water3d-desk" in names

    def test_presets_initialize(self):
        for name in list_scenarios():
            config = scenario_preset(name)
            particles = init_scenario(config)
            assert 0 < particles.n <= 500

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigurationError):
            scenario_preset("no-such-scenario")

    def test_grid_resolution_defaults(self):
        assert scenario_preset("water2d-desk").grid_resolution == 128
        assert scenario_preset("water3d-desk").grid_resolution == 64

    def test_override(self):
        assert scenario_preset("water2d-desk", total_steps=7).total_steps == 7
