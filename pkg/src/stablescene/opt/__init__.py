"""Settling energy, CEM search and the optimisation pipeline."""

from stablescene.opt.cem import SIGMA_FLOOR, CemConfig, CemResult, IterationLog, Mover, cem_optimize
from stablescene.opt.energy import (
    EnergyReport,
    EnergyWeights,
    batch_energies,
    energy_layout,
    energy_pen,
    energy_stab,
    energy_vel,
    evaluate_candidate,
    weighted_total,
)
from stablescene.opt.pipeline import (
    STAGES,
    PipelineConfig,
    PipelineResult,
    global_units,
    optimize_global,
    optimize_local_groups,
    place_wall_ceiling,
    run_pipeline,
    wall_planes,
)

__all__ = [
    "SIGMA_FLOOR",
    "STAGES",
    "CemConfig",
    "CemResult",
    "EnergyReport",
    "EnergyWeights",
    "IterationLog",
    "Mover",
    "PipelineConfig",
    "PipelineResult",
    "batch_energies",
    "cem_optimize",
    "energy_layout",
    "energy_pen",
    "energy_stab",
    "energy_vel",
    "evaluate_candidate",
    "global_units",
    "optimize_global",
    "optimize_local_groups",
    "place_wall_ceiling",
    "run_pipeline",
    "wall_planes",
    "weighted_total",
]
