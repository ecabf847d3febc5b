"""Hybrid particle fluid simulation toolkit.

A classical MLS-MPM solver, a graph-network surrogate that runs at reduced
spatiotemporal resolution with an automatic fallback safeguard, and a
sketch-driven control pipeline built on reverse simulation.

The FLUIDFORGE_THREADS environment variable caps solver parallelism (it
seeds the BLAS/OpenMP thread-count variables, so it must be set before
numpy is first imported).
"""

import os as _os

if "FLUIDFORGE_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["FLUIDFORGE_THREADS"])

from .core import (Blob, HalfPlane, Material, MaterialKind, ParticleSet,
                   ScenarioConfig, Trajectory, init_scenario, list_scenarios,
                   load_trajectory, save_trajectory, scenario_preset)

__all__ = [
    "Blob", "HalfPlane", "Material", "MaterialKind", "ParticleSet",
    "ScenarioConfig", "Trajectory", "init_scenario", "list_scenarios",
    "load_trajectory", "save_trajectory", "scenario_preset",
]

__version__ = "0.1.0"
