"""fluidforge command line: batch workflows over the simulation stack.

Subcommands: simulate, downsample, train, hybrid, sweep, controlgen,
controleval, serve.  Results land in files (trajectories, weights, CSV
tables, episode triplets); a one-line JSON summary goes to stdout so runs
are scriptable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .control import (CONTROL_STEPS, control_comparison,
                      generate_control_episode, save_force_field, write_ppm)
from .core import (ScenarioConfig, list_scenarios, load_trajectory,
                   save_trajectory, scenario_preset)
from .errors import FluidForgeError
from .hybrid import (HybridConfig, hybrid_rollout, reduced_ground_truth,
                     tradeoff_sweep, train_surrogate_for_scenario,
                     write_metric_csv, write_sweep_csv)
from .mpm import simulate
from .neural import SurrogateConfig, load_weights, save_weights
from .resolution import ReductionConfig, temporal_stride


def _scenario_from_args(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        payload = json.loads(Path(args.config).read_text())
        config = ScenarioConfig.from_dict(payload)
    else:
        config = scenario_preset(args.scenario)
    overrides = {}
    if getattr(args, "steps", None) is not None:
        overrides["total_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(config, **overrides) if overrides else config


def _reduction_from_args(args) -> ReductionConfig:
    return ReductionConfig(particle_ratio=args.ratio, time_stride=args.stride)


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def cmd_simulate(args) -> int:
    config = _scenario_from_args(args)
    traj = simulate(config, record_timing=args.timing)
    save_trajectory(traj, args.out)
    summary = {"out": args.out, "frames": traj.frame_count, "particles": traj.n}
    if args.timing:
        summary["mean_step_s"] = float(np.mean(traj.timing_log))
    _emit(summary)
    return 0


def cmd_downsample(args) -> int:
    config = _scenario_from_args(args)
    reduction = _reduction_from_args(args)
    fine = reduced_ground_truth(config, reduction)
    coarse = temporal_stride(fine, reduction.time_stride)
    save_trajectory(coarse, args.out)
    _emit({"out": args.out, "frames": coarse.frame_count,
           "particles": coarse.n, "dt": coarse.dt})
    return 0


def cmd_train(args) -> int:
    config = _scenario_from_args(args)
    reduction = _reduction_from_args(args)
    if args.arch == "desk":
        arch = SurrogateConfig.desk(dim=config.dim)
    elif args.arch == "full":
        arch = SurrogateConfig(dim=config.dim)
    else:
        layers, width = (int(part) for part in args.arch.split("x"))
        arch = SurrogateConfig(dim=config.dim, layers=layers, width=width)
    seeds = tuple(int(s) for s in args.data_seeds.split(","))
    weights = train_surrogate_for_scenario(
        config, reduction, steps=args.train_steps, lr=args.lr, arch=arch,
        train_seeds=seeds, train_seed=args.seed or 0)
    save_weights(weights, args.out)
    _emit({"out": args.out, "layers": arch.layers, "width": arch.width})
    return 0


def _hybrid_config(args, reduction) -> HybridConfig:
    weights = load_weights(args.weights) if args.weights else None
    return HybridConfig(reduction=reduction, fallback_threshold=args.rc,
                        fast_path=weights)


def _load_truth(args, config):
    if args.truth:
        return load_trajectory(args.truth)
    if args.compute_truth:
        return simulate(config)
    return None


def cmd_hybrid(args) -> int:
    config = _scenario_from_args(args)
    reduction = _reduction_from_args(args)
    hconfig = _hybrid_config(args, reduction)
    truth = _load_truth(args, config)
    report = hybrid_rollout(config, hconfig, truth)
    save_trajectory(report.trajectory, args.out)
    if args.csv and report.grid_rmse_curve is not None:
        write_metric_csv(report.grid_rmse_curve, args.csv)
    _emit({"out": args.out, "mpm_fraction": report.mpm_fraction,
           "mean_step_latency_s": report.mean_step_latency,
           "mean_rmse": (float(report.grid_rmse_curve.mean())
                         if report.grid_rmse_curve is not None else None)})
    return 0


def cmd_sweep(args) -> int:
    config = _scenario_from_args(args)
    reduction = _reduction_from_args(args)
    weights = load_weights(args.weights) if args.weights else None
    truth = _load_truth(args, config)
    configs = [HybridConfig(reduction=reduction, fallback_threshold=float(rc),
                            fast_path=weights)
               for rc in args.rc.split(",")]
    rows = tradeoff_sweep(config, configs, truth)
    write_sweep_csv(rows, args.out)
    _emit({"out": args.out, "rows": len(rows)})
    return 0


def cmd_controlgen(args) -> int:
    config = _scenario_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for episode in range(args.episodes):
        scenario = replace(config, seed=(args.seed or 0) + episode)
        traj, start, field_, sketch = generate_control_episode(
            scenario, total_steps=args.control_steps,
            sketch_kind=args.sketch)
        stem = out_dir / f"episode_{episode:03d}"
        save_trajectory(traj, f"{stem}.flf")
        save_force_field(field_, f"{stem}.fff")
        write_ppm(sketch.raster, f"{stem}.ppm")
        Path(f"{stem}.sketch.json").write_text(json.dumps(sketch.to_dict()))
        written.append(stem.name)
    _emit({"out": str(out_dir), "episodes": written})
    return 0


def cmd_controleval(args) -> int:
    config = _scenario_from_args(args)
    rows = control_comparison(config, episodes=args.episodes,
                              total_steps=args.control_steps,
                              seed0=args.seed or 100)
    write_sweep_csv(rows, args.out)
    reverse = float(np.mean([r["reverse_rmse"] for r in rows]))
    baseline = float(np.mean([r["baseline_rmse"] for r in rows]))
    _emit({"out": args.out, "episodes": len(rows),
           "mean_reverse_rmse": reverse, "mean_baseline_rmse": baseline,
           "reverse_beats_baseline": reverse < baseline})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app
    app = build_app(frame_rate=args.frame_rate, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _add_scenario_args(parser, default="water2d-desk"):
    parser.add_argument("--scenario", default=default,
                        help="preset name (see `fluidforge scenarios`)")
    parser.add_argument("--config", help="JSON scenario config file")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--seed", type=int)


def _add_reduction_args(parser):
    parser.add_argument("--ratio", type=float, default=1 / 1.75,
                        help="particle downsampling ratio")
    parser.add_argument("--stride", type=int, default=2,
                        help="temporal stride (fine steps per coarse step)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluidforge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenarios", help="list scenario presets")
    p.set_defaults(func=lambda args: (_emit({"scenarios": list_scenarios()}), 0)[1])

    p = sub.add_parser("simulate", help="ground-truth MPM rollout")
    _add_scenario_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("downsample",
                       help="re-simulate at reduced resolution and stride")
    _add_scenario_args(p)
    _add_reduction_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("train", help="train the surrogate on a scenario")
    _add_scenario_args(p)
    _add_reduction_args(p)
    p.add_argument("--train-steps", type=int, default=600)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--arch", default="desk",
                   help="desk | full | LAYERSxWIDTH (e.g. 2x24)")
    p.add_argument("--data-seeds", default="0,1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("hybrid", help="safeguarded hybrid rollout")
    _add_scenario_args(p)
    _add_reduction_args(p)
    p.add_argument("--rc", type=float, default=0.8)
    p.add_argument("--weights", help="surrogate weights (default: coarse MPM)")
    p.add_argument("--truth", help="ground-truth trajectory file")
    p.add_argument("--compute-truth", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="per-step RMSE csv")
    p.set_defaults(func=cmd_hybrid)

    p = sub.add_parser("sweep", help="threshold sweep -> CSV")
    _add_scenario_args(p)
    _add_reduction_args(p)
    p.add_argument("--rc", default="0.0,0.3,0.6,0.9",
                   help="comma-separated thresholds")
    p.add_argument("--weights")
    p.add_argument("--truth")
    p.add_argument("--compute-truth", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("controlgen",
                       help="generate (trajectory, field, sketch) triplets")
    _add_scenario_args(p, default="collide2d-desk")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--control-steps", type=int, default=CONTROL_STEPS)
    p.add_argument("--sketch", choices=("arrow", "oval"), default="arrow")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_controlgen)

    p = sub.add_parser("controleval",
                       help="reverse-field controller vs constant baseline")
    _add_scenario_args(p, default="collide2d-desk")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--control-steps", type=int, default=CONTROL_STEPS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_controleval)

    p = sub.add_parser("serve", help="run the streaming session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--frame-rate", type=float, default=30.0)
    p.add_argument("--frontend", help="directory of the built studio to serve")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FluidForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
