"""Stability, velocity, penetration and layout-preservation energy terms."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from stablescene.errors import InvalidArgumentError, SimulationDivergedError
from stablescene.geom import CONTACT_EPSILON, geodesic_distance
from stablescene.geom import rotation as rot
from stablescene.scene import Layout, Scene
from stablescene.sim import BatchResult, SimConfig, Simulator, SimTrace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyWeights:
    stab: float = 1.0
    vel: float = 1.0
    pen: float = 0.5
    layout: float = 1.0
    pos: float = 6.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidArgumentError(f"energy weight {f.name} must be a finite non-negative number, got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> EnergyWeights:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidArgumentError(f"unknown energy weights: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyReport:
    """Raw (unweighted) terms and the weighted total."""

    e_stab: float
    e_vel: float
    e_pen: int
    e_layout: float
    total: float

    @classmethod
    def diverged(cls) -> EnergyReport:
        return cls(np.inf, np.inf, 0, np.inf, np.inf)

    def to_dict(self) -> dict:
        return asdict(self)


def weighted_total(w: EnergyWeights, e_stab, e_vel, e_pen, e_layout):
    return w.stab * e_stab + w.vel * e_vel + w.pen * e_pen + w.layout * e_layout


def _dynamic(trace: SimTrace):
    return [k for k, s in trace.initial.items() if s.dynamic]


def energy_stab(trace: SimTrace, candidate: Layout) -> float:
    total = 0.0
    for k in _dynamic(trace):
        fin = trace.final[k].pose
        total += float(np.linalg.norm(fin.pos - candidate[k].pos)) + geodesic_distance(fin.quat, candidate[k].quat)
    return total


def energy_vel(trace: SimTrace) -> float:
    return float(sum(np.linalg.norm(trace.probe[k].lin_vel) for k in _dynamic(trace)))


def energy_pen(scene: Scene, candidate: Layout, trace: SimTrace, eps: float = CONTACT_EPSILON) -> int:
    sim = Simulator(scene, trace.ids, ())
    before, _ = sim.count_intersections(candidate, eps)
    after, _ = sim.count_intersections(trace.final_layout(), eps)
    return before + after


def energy_layout(trace: SimTrace, cano: Layout, weights: EnergyWeights = EnergyWeights()) -> float:
    total = 0.0
    for k in _dynamic(trace):
        fin = trace.final[k].pose
        total += weights.pos * float(np.linalg.norm(fin.pos - cano[k].pos)) + geodesic_distance(fin.quat, cano[k].quat)
    return total


def evaluate_candidate(
    scene: Scene,
    candidate: Layout,
    cano: Layout,
    fixed_ids=(),
    weights: EnergyWeights = EnergyWeights(),
    sim_config: SimConfig | None = None,
    ids=None,
) -> EnergyReport:
    """Settle once and score the candidate; a diverged rollout scores +inf."""
    sim = Simulator(scene, ids, fixed_ids, sim_config)
    try:
        trace = sim.settle(candidate)
    except SimulationDivergedError as exc:
        log.warning("candidate discarded: %s", exc)
        return EnergyReport.diverged()
    e_stab = energy_stab(trace, candidate)
    e_vel = energy_vel(trace)
    before, _ = sim.count_intersections(candidate)
    after, _ = sim.count_intersections(trace.final_layout())
    e_pen = before + after
    e_layout = energy_layout(trace, cano, weights)
    return EnergyReport(e_stab, e_vel, e_pen, e_layout, weighted_total(weights, e_stab, e_vel, e_pen, e_layout))


@dataclass(frozen=True)
class BatchEnergies:
    e_stab: np.ndarray
    e_vel: np.ndarray
    e_pen: np.ndarray
    e_layout: np.ndarray
    total: np.ndarray

    def report(self, i: int) -> EnergyReport:
        if not np.isfinite(self.total[i]):
            return EnergyReport.diverged()
        return EnergyReport(
            float(self.e_stab[i]), float(self.e_vel[i]), int(self.e_pen[i]), float(self.e_layout[i]), float(self.total[i])
        )


def batch_energies(
    result: BatchResult,
    quats: np.ndarray,
    positions: np.ndarray,
    base_q: np.ndarray,
    base_t: np.ndarray,
    dynamic: np.ndarray,
    weights: EnergyWeights,
) -> BatchEnergies:
    """Vectorised energy terms for K candidates settled by :meth:`Simulator.settle_batch`."""
    fq = result.final[:, :, 0:4]
    ft = result.final[:, :, 4:7]
    dyn = dynamic[None, :]
    drift = np.linalg.norm(ft - positions, axis=-1)
    turn = rot.geodesic_distance_batch(fq, quats)
    e_stab = np.where(dyn, drift + turn, 0.0).sum(axis=1)
    e_vel = np.where(dyn, np.linalg.norm(result.probe[:, :, 7:10], axis=-1), 0.0).sum(axis=1)
    e_pen = (result.pen_initial + result.pen_final).astype(np.int64)
    dev = np.linalg.norm(ft - base_t[None], axis=-1)
    dturn = rot.geodesic_distance_batch(fq, base_q[None])
    e_layout = np.where(dyn, weights.pos * dev + dturn, 0.0).sum(axis=1)
    total = weighted_total(weights, e_stab, e_vel, e_pen, e_layout)
    bad = result.diverged
    total = np.where(bad, np.inf, total)
    return BatchEnergies(
        np.where(bad, np.inf, e_stab),
        np.where(bad, np.inf, e_vel),
        np.where(bad, 0, e_pen),
        np.where(bad, np.inf, e_layout),
        total,
    )
