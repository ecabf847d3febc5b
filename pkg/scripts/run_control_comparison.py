"""Reverse-solved force fields vs the constant-force baseline.

Generates control episodes by reverse simulation and reports the final grid
mass RMSE of both controllers against the target shape.
"""

import argparse

import numpy as np

from fluidforge.control import control_comparison
from fluidforge.core import scenario_preset


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--scenario", default="collide2d-desk")
    parser.add_argument("--episodes", type=int, default=10)
    args = parser.parse_args()

    config = scenario_preset(args.scenario)
    rows = control_comparison(config, episodes=args.episodes)
    print(f"{'episode':>7} {'reverse':>8} {'baseline':>9}")
    for row in rows:
        print(f"{row['episode']:>7} {row['reverse_rmse']:>8.4f} "
              f"{row['baseline_rmse']:>9.4f}")
    reverse = np.mean([r["reverse_rmse"] for r in rows])
    baseline = np.mean([r["baseline_rmse"] for r in rows])
    print(f"\nmean final RMSE: reverse {reverse:.4f} vs baseline {baseline:.4f}"
          f" ({'reverse wins' if reverse < baseline else 'baseline wins'})")


if __name__ == "__main__":
    main()
