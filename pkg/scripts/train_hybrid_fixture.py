"""Regenerate the pre-trained surrogate fixture used by the acceptance suite.

Trains the lean rollout surrogate (2 layers, width 12) on reduced-resolution
rollouts of the water2d-bench scenario and writes
tests/fixtures/water2d_bench_hybrid.flw.  Takes a few minutes on CPU.
"""

import time
from pathlib import Path

import numpy as np

from fluidforge.core import scenario_preset
from fluidforge.hybrid import MAX_NEIGHBORS, training_samples_for_scenario
from fluidforge.neural import (SurrogateConfig, compute_norm_stats,
                               init_weights, save_weights, train)
from fluidforge.resolution import ReductionConfig

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "water2d_bench_hybrid.flw"


def main():
    config = scenario_preset("water2d-bench")
    reduction = ReductionConfig()
    samples = training_samples_for_scenario(config, reduction, seeds=(0, 1, 2, 3))
    stats = compute_norm_stats(samples)
    arch = SurrogateConfig(dim=2, layers=2, width=12)
    weights = init_weights(arch, stats, seed=0)
    started = time.perf_counter()
    trained, losses = train(weights, samples, steps=9000, lr=1e-3,
                            noise_std=1e-3, lr_decay=0.1, lr_decay_steps=9000,
                            seed=0, max_degree=MAX_NEIGHBORS)
    print(f"trained in {time.perf_counter() - started:.0f}s; "
          f"loss {np.mean(losses[:200]):.3f} -> {np.mean(losses[-200:]):.3f}")
    OUT.parent.mkdir(parents=True, exist_ok=True)
    save_weights(trained, OUT)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
