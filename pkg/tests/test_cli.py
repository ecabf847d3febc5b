import json

import numpy as np
import pytest

from fluidforge.cli import main
from fluidforge.core import load_trajectory


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    payload = json.loads(out[-1]) if out else {}
    return code, payload


class TestCli:
    def test_scenarios_listing(self, capsys):
        code, payload = run_cli(capsys, "scenarios")
        assert code == 0
        assert "water2d-desk" in payload["scenarios"]

    def test_simulate_frame_count(self, capsys, tmp_path):
        out = tmp_path / "t.flf"
        code, payload = run_cli(capsys, "simulate", "--scenario",
                                "freefall2d-desk", "--steps", "30",
                                "--out", str(out))
        assert code == 0
        traj = load_trajectory(out)
        assert traj.frame_count == 31
        assert payload["frames"] == 31

    def test_downsample_reduces_particles(self, capsys, tmp_path):
        out = tmp_path / "r.flf"
        code, payload = run_cli(capsys, "downsample", "--scenario",
                                "freefall2d-desk", "--steps", "20",
                                "--ratio", "0.5", "--stride", "2",
                                "--out", str(out))
        assert code == 0
        traj = load_trajectory(out)
        assert traj.n == 50
        assert traj.dt == pytest.approx(0.005)
        assert traj.frame_count == 11

    def test_hybrid_and_metric_csv(self, capsys, tmp_path):
        out = tmp_path / "h.flf"
        csv_path = tmp_path / "m.csv"
        code, payload = run_cli(capsys, "hybrid", "--scenario",
                                "freefall2d-desk", "--steps", "20",
                                "--compute-truth", "--out", str(out),
                                "--csv", str(csv_path))
        assert code == 0
        traj = load_trajectory(out)
        assert traj.mode_log is not None
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "step,metric,value"
        assert len(lines) == 11  # 10 coarse steps
        assert payload["mpm_fraction"] == 0.0

    def test_sweep_rows(self, capsys, tmp_path):
        out = tmp_path / "sweep.csv"
        code, payload = run_cli(capsys, "sweep", "--scenario",
                                "freefall2d-desk", "--steps", "20",
                                "--rc", "0.0,0.3,0.6,0.9", "--out", str(out))
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 5  # header + 4 rows
        assert payload["rows"] == 4

    def test_controlgen_triplets(self, capsys, tmp_path):
        out_dir = tmp_path / "episodes"
        code, payload = run_cli(capsys, "controlgen", "--scenario",
                                "collide2d-desk", "--episodes", "2",
                                "--control-steps", "12", "--out", str(out_dir))
        assert code == 0
        assert len(payload["episodes"]) == 2
        for stem in ("episode_000", "episode_001"):
            assert (out_dir / f"{stem}.flf").exists()
            assert (out_dir / f"{stem}.fff").exists()
            assert (out_dir / f"{stem}.ppm").exists()
            assert (out_dir / f"{stem}.sketch.json").exists()

    def test_train_writes_weights(self, capsys, tmp_path):
        out = tmp_path / "w.flw"
        code, payload = run_cli(capsys, "train", "--scenario",
                                "freefall2d-desk", "--steps", "24",
                                "--train-steps", "5", "--arch", "2x16",
                                "--data-seeds", "0", "--out", str(out))
        assert code == 0
        from fluidforge.neural import load_weights
        weights = load_weights(out)
        assert weights.config.layers == 2 and weights.config.width == 16

    def test_unknown_scenario_exits_one(self, capsys, tmp_path):
        code = main(["simulate", "--scenario", "nope", "--out",
                     str(tmp_path / "x.flf")])
        assert code == 1

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["simulate", "--bogus", "1"])
        assert excinfo.value.code == 2
