"""Canonicalize, optimise local groups, optimise rigid units globally, then place wall mounts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from stablescene import canon
from stablescene.errors import (
    InvalidArgumentError,
    OptimizationFailedError,
    SimulationDivergedError,
    StableSceneError,
    StageError,
    WallFitError,
)
from stablescene.geom import Pose, aabb_of, hulls_intersect
from stablescene.scene import Layout, NodeKind, Scene, Stage, layout_to_dict, local_groups
from stablescene.sim import SimConfig, Simulator
from stablescene.opt.cem import CemConfig, CemResult, cem_optimize
from stablescene.opt.energy import EnergyWeights, evaluate_candidate

log = logging.getLogger(__name__)

WALL_STEP = 1e-3
WALL_MAX_STEPS = 5000


STAGES = ("local", "global", "wall")


@dataclass(frozen=True)
class PipelineConfig:
    cem: CemConfig = CemConfig()
    weights: EnergyWeights = EnergyWeights()
    sim: SimConfig = SimConfig()
    workers: int = 1
    stages: tuple[str, ...] = STAGES

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise InvalidArgumentError(f"unknown stages {unknown}; choose from {list(STAGES)}")
        if not isinstance(self.workers, (int, np.integer)) or self.workers < 1:
            raise InvalidArgumentError(f"workers must be a positive integer, got {self.workers!r}")

    def to_dict(self) -> dict:
        return {
            "cem": self.cem.to_dict(),
            "energy": self.weights.to_dict(),
            "sim": self.sim.to_dict(),
            "workers": self.workers,
            "stages": list(self.stages),
        }


def _cem_record(stage: str, root: str | None, opt_ids, res: CemResult) -> dict:
    return {
        "stage": stage,
        "group": root,
        "opt_ids": list(opt_ids),
        "best_energy": res.best_energy.to_dict(),
        "best_adjustment": {k: res.best_adjustment[i] for i, k in enumerate(opt_ids)},
        "history": res.history,
        "elite_stats": res.elite_stats,
    }


def optimize_local_groups(
    scene: Scene, cano: Layout, config: PipelineConfig = PipelineConfig(), records: list | None = None
) -> Layout:
    """Optimise each (root, children) group in post-order with the root held in place.

    A child's own descendants were settled by earlier groups and move rigidly
    with it. Groups inside wall or ceiling mounted subtrees are left to wall
    placement.
    """
    tree = scene.tree
    immovable = {k for k, o in scene.objects.items() if not o.movable}
    layout = cano
    for group in local_groups(tree):
        if tree.is_wall_rooted(group.root_id):
            continue
        kids = [c for c in group.child_ids if c not in immovable]
        if not kids:
            continue
        attached = {c: tree.descendants(c) for c in kids}
        sim_ids = [group.root_id] + [k for c in group.child_ids for k in [c, *tree.descendants(c)]]
        fixed = {group.root_id} | (immovable & set(sim_ids))
        res = cem_optimize(
            scene, layout, kids, fixed, config.cem, config.weights, config.sim,
            attached=attached, sim_ids=sim_ids, workers=config.workers, label=group.root_id,
        )
        log.info("local group %r: best energy %.6g", group.root_id, res.best_energy.total)
        if records is not None:
            records.append(_cem_record("local", group.root_id, kids, res))
        layout = layout.replace({k: res.best[k] for k in sim_ids})
    return layout


def global_units(scene: Scene) -> list[str]:
    """Top-level floor-supported movable objects; each moves with its whole subtree."""
    tree = scene.tree
    return [
        k for k in tree.top_level()
        if tree.parent[k].kind in (NodeKind.GROUND, NodeKind.GROUND_WALL) and scene[k].movable
    ]


def optimize_global(
    scene: Scene, layout: Layout, config: PipelineConfig = PipelineConfig(), records: list | None = None
) -> Layout:
    tree = scene.tree
    units = global_units(scene)
    if not units:
        return layout
    sim_ids = [k for k in scene.ids if not tree.is_wall_rooted(k)]
    fixed = {k for k in sim_ids if not scene[k].movable}
    attached = {k: tree.descendants(k) for k in units}
    res = cem_optimize(
        scene, layout, units, fixed, config.cem, config.weights, config.sim,
        attached=attached, sim_ids=sim_ids, workers=config.workers, label="global",
    )
    log.info("global stage: best energy %.6g", res.best_energy.total)
    if records is not None:
        records.append(_cem_record("global", None, units, res))
    return layout.replace({k: res.best[k] for k in sim_ids})


def _objects_intersect(scene: Scene, layout: Layout, a: str, b: str) -> bool:
    pa, pb = layout[a], layout[b]
    for ha in scene[a].hulls:
        box_a = aabb_of(ha, pa)
        for hb in scene[b].hulls:
            box_b = aabb_of(hb, pb)
            if np.any(box_a.min > box_b.max) or np.any(box_b.min > box_a.max):
                continue
            if hulls_intersect(ha, pa, hb, pb):
                return True
    return False


def _scene_aabb(scene: Scene, layout: Layout, ids):
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for k in ids:
        box = scene[k].aabb(layout[k])
        lo = np.minimum(lo, box.min)
        hi = np.maximum(hi, box.max)
    return lo, hi


def wall_planes(scene: Scene, layout: Layout, settled_ids) -> list[tuple[str, int, float, float]]:
    """(name, axis, coordinate, outward sign) of the back, left, right and ceiling planes."""
    lo, hi = _scene_aabb(scene, layout, settled_ids)
    return [
        ("back", 2, float(hi[2]), 1.0),
        ("left", 0, float(lo[0]), -1.0),
        ("right", 0, float(hi[0]), 1.0),
        ("ceiling", 1, float(hi[1]), 1.0),
    ]


def place_wall_ceiling(scene: Scene, settled: Layout, moves: list | None = None) -> Layout:
    """Push wall and ceiling mounted subtrees out of the settled objects along the nearest fitted plane."""
    tree = scene.tree
    mounts = [k for k in tree.top_level() if tree.parent[k].kind in (NodeKind.WALL, NodeKind.CEILING)]
    settled_ids = [k for k in scene.ids if not tree.is_wall_rooted(k)]
    if mounts and not settled_ids:
        raise WallFitError("no floor-supported objects to fit wall planes to")
    layout = settled
    planes = None
    for m in mounts:
        members = [m, *tree.descendants(m)]

        def clashes(lay):
            return any(_objects_intersect(scene, lay, a, b) for a in members for b in settled_ids)

        if not clashes(layout):
            continue
        if planes is None:
            planes = wall_planes(scene, settled, settled_ids)
        centroid = layout[m].apply(scene[m].centroid)
        name, axis, coord, sign = min(planes, key=lambda p: abs(centroid[p[1]] - p[2]))
        base = {k: layout[k] for k in members}
        for step in range(1, WALL_MAX_STEPS + 1):
            shift = sign * step * WALL_STEP
            poses = {}
            for k in members:
                pos = base[k].pos.copy()
                pos[axis] = base[k].pos[axis] + shift
                poses[k] = Pose(base[k].quat, pos)
            trial = layout.replace(poses)
            if not clashes(trial):
                layout = trial
                log.info("moved %r %.3f m towards the %s plane", m, abs(shift), name)
                if moves is not None:
                    moves.append({"id": m, "plane": name, "axis": axis, "shift": shift, "members": members})
                break
        else:
            raise WallFitError(f"could not clear {m!r} within {WALL_MAX_STEPS * WALL_STEP:.1f} m")
    return layout.replace(stage=Stage.OPTIMIZED)


@dataclass
class PipelineResult:
    canonical: Layout
    local: Layout
    global_: Layout
    final: Layout
    report: dict = field(default_factory=dict)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (OptimizationFailedError, SimulationDivergedError, StageError):
        raise
    except StableSceneError as exc:
        raise StageError(name, exc) from exc


def run_pipeline(scene: Scene, raw_layout: Layout, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Full optimisation of a raw layout; deterministic for a given configuration."""
    from stablescene.eval import phys_metrics

    cano, up = _stage("canonicalize", canon.canonicalize, scene, raw_layout)
    records: list[dict] = []
    run = set(config.stages)
    local = _stage("local", optimize_local_groups, scene, cano, config, records) if "local" in run else cano
    glob = _stage("global", optimize_global, scene, local, config, records) if "global" in run else local
    moves: list[dict] = []
    if "wall" in run:
        final = _stage("wall", place_wall_ceiling, scene, glob, moves)
    else:
        final = glob.replace(stage=Stage.OPTIMIZED)

    fixed = scene.immovable_ids()
    sim = Simulator(scene, None, fixed, config.sim)
    trace = _stage("evaluate", sim.settle, final)
    metrics = phys_metrics(scene, final, trace)
    ground_ids = [k for k in scene.ids if not scene.tree.is_wall_rooted(k)]
    energy = evaluate_candidate(scene, final, cano, fixed, config.weights, config.sim, ids=ground_ids)
    report = {
        "seed": config.cem.seed,
        "config": config.to_dict(),
        "up": {"direction": up.direction, "confidence": up.confidence},
        "stages": {
            "canonical": layout_to_dict(cano),
            "local": layout_to_dict(local),
            "global": layout_to_dict(glob),
            "final": layout_to_dict(final),
        },
        "optimization": records,
        "wall_moves": moves,
        "final_energy": energy.to_dict(),
        "metrics": metrics.to_dict(),
    }
    return PipelineResult(cano, local, glob, final, report)
