"""Deterministic rigid-body settling simulator.

A :class:`Simulator` packs the geometry of a set of objects once and can then
settle one layout (:meth:`Simulator.settle`) or many candidate layouts in a
batch (:meth:`Simulator.settle_batch`). Each candidate is simulated
independently, so batch results do not depend on how work is split across
threads.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from stablescene.errors import InvalidArgumentError, SimulationDivergedError
from stablescene.geom import CONTACT_EPSILON, Pose
from stablescene.geom import rotation as rot
from stablescene.scene import Layout, Scene
from stablescene.sim import _kernels as K
from stablescene.sim.config import SimConfig
from stablescene.sim.pack import PackedBodies, body_mass_properties, pack


@dataclass(frozen=True)
class BodyState:
    pose: Pose
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    dynamic: bool


@dataclass(frozen=True)
class SimTrace:
    initial: Mapping[str, BodyState]
    probe: Mapping[str, BodyState]
    final: Mapping[str, BodyState]
    peak_lin_vel: Mapping[str, float]
    peak_ang_vel: Mapping[str, float]
    trajectory: np.ndarray | None = None  # (steps + 1, bodies, 13) when recorded

    @property
    def ids(self) -> list[str]:
        return list(self.initial)

    def final_layout(self, stage=None) -> Layout:
        poses = {k: s.pose for k, s in self.final.items()}
        return Layout(poses) if stage is None else Layout(poses, stage)


@dataclass(frozen=True)
class BatchResult:
    """Per-candidate settling outcome; arrays are indexed [candidate, body]."""

    probe: np.ndarray  # (K, NB, 13): quat, pos, lin_vel, ang_vel
    final: np.ndarray
    peaks: np.ndarray  # (K, NB, 2): peak linear and angular speed
    diverged: np.ndarray  # (K,) bool
    pen_initial: np.ndarray  # (K,) intersecting object pairs before settling
    pen_final: np.ndarray  # (K,) and after


def _state(row: np.ndarray, dynamic: bool) -> BodyState:
    return BodyState(
        Pose(rot.normalize(row[0:4]), row[4:7]),
        row[7:10].copy(),
        row[10:13].copy(),
        bool(dynamic),
    )


class Simulator:
    """Settling simulator bound to a fixed set of objects."""

    def __init__(self, scene: Scene, ids: Iterable[str] | None = None, fixed_ids=(), config: SimConfig | None = None):
        self.scene = scene
        self.config = config or SimConfig()
        ids = list(scene.ids if ids is None else ids)
        for oid in ids:
            if oid not in scene.objects:
                raise InvalidArgumentError(f"unknown object id {oid!r}")
        fixed = set(fixed_ids)
        self.fixed_ids = frozenset(k for k in ids if k in fixed)
        self.bodies: PackedBodies = pack(scene, ids, self.fixed_ids)
        self._fp, self._ip = self.config.kernel_params()

    @property
    def ids(self) -> tuple[str, ...]:
        return self.bodies.ids

    def pose_arrays(self, layout: Layout) -> tuple[np.ndarray, np.ndarray]:
        missing = [k for k in self.ids if k not in layout.poses]
        if missing:
            raise InvalidArgumentError(f"layout is missing poses for {missing}")
        q = np.array([layout[k].quat for k in self.ids], dtype=float).reshape(-1, 4)
        t = np.array([layout[k].pos for k in self.ids], dtype=float).reshape(-1, 3)
        return q, t

    def settle(self, layout: Layout, record: bool = False) -> SimTrace:
        q0, t0 = self.pose_arrays(layout)
        probe, final, pl, pa, status, step, body, traj = K.simulate(
            *self.bodies.kernel_args(), q0, t0, self._fp, self._ip, record
        )
        if status != K.STATUS_OK:
            raise SimulationDivergedError(int(step), self.ids[body])
        dyn = self.bodies.dynamic
        initial = {}
        for i, k in enumerate(self.ids):
            initial[k] = BodyState(layout[k], np.zeros(3), np.zeros(3), bool(dyn[i]))
        probe_s, final_s = {}, {}
        for i, k in enumerate(self.ids):
            if dyn[i]:
                probe_s[k] = _state(probe[i], True)
                final_s[k] = _state(final[i], True)
            else:
                # fixed bodies are reported exactly as given
                probe_s[k] = final_s[k] = initial[k]
        return SimTrace(
            initial=initial,
            probe=probe_s,
            final=final_s,
            peak_lin_vel={k: float(pl[i]) for i, k in enumerate(self.ids)},
            peak_ang_vel={k: float(pa[i]) for i, k in enumerate(self.ids)},
            trajectory=traj if record else None,
        )

    def settle_batch(self, quats: np.ndarray, positions: np.ndarray, workers: int = 1,
                     eps: float = CONTACT_EPSILON) -> BatchResult:
        """Settle K candidates given as (K, NB, 4) quaternions and (K, NB, 3) positions."""
        quats = np.ascontiguousarray(quats, dtype=float)
        positions = np.ascontiguousarray(positions, dtype=float)
        kk = quats.shape[0]
        args = self.bodies.kernel_args()

        def run(lo, hi):
            return K.simulate_batch(*args, quats[lo:hi], positions[lo:hi], self._fp, self._ip, eps)

        workers = max(1, min(int(workers), kk))
        if workers == 1:
            parts = [run(0, kk)]
        else:
            bounds = np.linspace(0, kk, workers + 1).astype(int)
            with ThreadPoolExecutor(workers) as ex:
                parts = list(ex.map(run, bounds[:-1], bounds[1:]))
        probe, final, peaks, status, pen0, pen1 = (np.concatenate(x) for x in zip(*parts))
        return BatchResult(probe, final, peaks, status != K.STATUS_OK, pen0, pen1)

    def count_intersections(self, layout: Layout, eps: float = CONTACT_EPSILON) -> tuple[int, dict[str, bool]]:
        q, t = self.pose_arrays(layout)
        b = self.bodies
        count, flags = K.intersections(b.hv, b.h_vs, b.h_body, len(self.ids), q, t, b.com, eps)
        return int(count), {k: bool(flags[i]) for i, k in enumerate(self.ids)}


def settle(scene: Scene, candidate_layout: Layout, fixed_ids=(), config: SimConfig | None = None,
           ids: Iterable[str] | None = None, record: bool = False) -> SimTrace:
    """Simulate ``ids`` (default: every object) from the candidate poses for ``config.steps`` steps."""
    return Simulator(scene, ids, fixed_ids, config).settle(candidate_layout, record=record)


def is_stable(trace: SimTrace, pos_thresh: float = 0.1, rot_thresh: float = 0.1) -> dict[str, bool]:
    out = {}
    for k, init in trace.initial.items():
        if not init.dynamic:
            out[k] = True
            continue
        fin = trace.final[k].pose
        moved = float(np.linalg.norm(fin.pos - init.pose.pos))
        turned = rot.geodesic_distance(fin.quat, init.pose.quat)
        out[k] = moved <= pos_thresh and turned <= rot_thresh
    return out


def kinetic_energy(scene: Scene, states: Mapping[str, BodyState]) -> float:
    total = 0.0
    for k, s in states.items():
        if not s.dynamic:
            continue
        obj = scene[k]
        _, inertia = body_mass_properties(obj)
        r = s.pose.matrix
        iw = r @ inertia @ r.T
        total += 0.5 * obj.mass * float(s.lin_vel @ s.lin_vel) + 0.5 * float(s.ang_vel @ iw @ s.ang_vel)
    return total


def trace_records(trace: SimTrace, ids: Iterable[str]) -> list[dict]:
    """Per-step records for a trace settled with ``record=True``."""
    if trace.trajectory is None:
        raise InvalidArgumentError("trace has no trajectory; settle with record=True")
    ids = list(ids)
    out = []
    for step, rows in enumerate(trace.trajectory):
        for i, k in enumerate(ids):
            row = rows[i]
            out.append({
                "step": step,
                "id": k,
                "quat": rot.canonical(row[0:4]).tolist(),
                "pos": row[4:7].tolist(),
                "lin_vel": row[7:10].tolist(),
                "ang_vel": row[10:13].tolist(),
            })
    return out


def dump_trace(trace: SimTrace, ids: Iterable[str], path) -> None:
    """Write the trajectory as newline-delimited JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace_records(trace, ids):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def trace_to_dict(trace: SimTrace) -> dict:
    def snap(states):
        return {
            k: {
                "quat": rot.canonical(s.pose.quat),
                "pos": s.pose.pos,
                "lin_vel": s.lin_vel,
                "ang_vel": s.ang_vel,
                "dynamic": s.dynamic,
            }
            for k, s in states.items()
        }

    return {
        "initial": snap(trace.initial),
        "probe": snap(trace.probe),
        "final": snap(trace.final),
        "peak_lin_vel": dict(trace.peak_lin_vel),
        "peak_ang_vel": dict(trace.peak_ang_vel),
    }


__all__ = [
    "BatchResult",
    "BodyState",
    "SimConfig",
    "SimTrace",
    "Simulator",
    "dump_trace",
    "is_stable",
    "kinetic_energy",
    "settle",
    "trace_records",
    "trace_to_dict",
]
