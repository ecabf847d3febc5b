"""Error-latency tradeoff sweep: the threshold ablation as a runnable script.

Simulates ground truth, sweeps the fallback threshold with the pre-trained
surrogate fixture, and prints/writes the (rc, mpm fraction, RMSE, latency)
table.
"""

import argparse
from pathlib import Path

from fluidforge.core import scenario_preset
from fluidforge.hybrid import (HybridConfig, tradeoff_sweep, write_sweep_csv)
from fluidforge.mpm import simulate
from fluidforge.neural import load_weights
from fluidforge.resolution import ReductionConfig

FIXTURE = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "water2d_bench_hybrid.flw"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--scenario", default="water2d-bench")
    parser.add_argument("--weights", default=str(FIXTURE))
    parser.add_argument("--rc", default="0.0,0.3,0.6,0.9")
    parser.add_argument("--out", default="tradeoff_sweep.csv")
    args = parser.parse_args()

    config = scenario_preset(args.scenario)
    weights = load_weights(args.weights)
    truth = simulate(config)
    reduction = ReductionConfig()
    configs = [HybridConfig(reduction=reduction, fallback_threshold=float(rc),
                            fast_path=weights) for rc in args.rc.split(",")]
    rows = tradeoff_sweep(config, configs, truth)
    write_sweep_csv(rows, args.out)
    print(f"{'rc':>5} {'mpm%':>6} {'rmse':>8} {'ms/step':>8}")
    for row in rows:
        print(f"{row['rc']:>5.2f} {row['mpm_fraction']*100:>5.1f}% "
              f"{row['mean_rmse']:>8.4f} {row['mean_latency_s']*1000:>8.2f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
