"""Cross-entropy-method search over per-object pose adjustments."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from stablescene.errors import InvalidArgumentError, OptimizationFailedError
from stablescene.geom import Pose
from stablescene.geom import rotation as rot
from stablescene.scene import Layout, Scene
from stablescene.sim import SimConfig, Simulator
from stablescene.opt.energy import BatchEnergies, EnergyReport, EnergyWeights, batch_energies

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4

# energy hook: (adjustments (K, n, 6), candidate quats (K, NB, 4), positions (K, NB, 3)) -> totals (K,)
EnergyHook = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CemConfig:
    samples: int = 2048
    iterations: int = 15
    elite_frac: float = 0.025
    episodes: int = 2
    sigma_trans: tuple[float, float, float] = (0.05, 0.005, 0.05)
    sigma_rot: tuple[float, float, float] = (0.005, 0.05, 0.005)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sigma_trans", tuple(float(s) for s in self.sigma_trans))
        object.__setattr__(self, "sigma_rot", tuple(float(s) for s in self.sigma_rot))
        if self.samples < 1 or self.iterations < 1 or self.episodes < 1:
            raise InvalidArgumentError("samples, iterations and episodes must all be >= 1")
        if not 0.0 < self.elite_frac <= 1.0:
            raise InvalidArgumentError(f"elite_frac must lie in (0, 1], got {self.elite_frac}")
        if len(self.sigma_trans) != 3 or len(self.sigma_rot) != 3:
            raise InvalidArgumentError("sigma_trans and sigma_rot need three components")
        if not all(np.isfinite(s) and s >= 0 for s in self.sigma_trans + self.sigma_rot):
            raise InvalidArgumentError("initial standard deviations must be finite and non-negative")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise InvalidArgumentError(f"seed must be a non-negative integer, got {self.seed!r}")

    @property
    def n_elite(self) -> int:
        # rounding first keeps e.g. 0.1 * 30 from becoming 4
        return max(1, math.ceil(round(self.elite_frac * self.samples, 9)))

    @property
    def sigma0(self) -> np.ndarray:
        return np.array(self.sigma_trans + self.sigma_rot)

    @classmethod
    def from_dict(cls, d: dict) -> CemConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown CEM options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_trans"] = list(self.sigma_trans)
        d["sigma_rot"] = list(self.sigma_rot)
        return d


@dataclass
class IterationLog:
    episode: int
    iteration: int
    samples: np.ndarray  # (K, n, 6)
    energies: np.ndarray  # (K,)
    elites: np.ndarray  # candidate indices, best first
    mean: np.ndarray  # distribution after the update
    var: np.ndarray


@dataclass
class CemResult:
    best: Layout
    best_adjustment: np.ndarray
    best_energy: EnergyReport
    history: list[float]
    elite_stats: list[dict] = field(default_factory=list)
    log: list[IterationLog] | None = None


class Mover:
    """Applies adjustments of selected objects to a base layout, carrying rigid attachments."""

    def __init__(self, ids: Sequence[str], base: Layout, opt_ids: Sequence[str], attached: Mapping[str, Sequence[str]]):
        self.ids = list(ids)
        index = {k: i for i, k in enumerate(self.ids)}
        self.base_q = np.array([base[k].quat for k in self.ids]).reshape(-1, 4)
        self.base_t = np.array([base[k].pos for k in self.ids]).reshape(-1, 3)
        self.opt_idx = np.array([index[k] for k in opt_ids], dtype=np.int64)
        # (owner slot, body index) for every attached body
        pairs = [(j, index[a]) for j, k in enumerate(opt_ids) for a in attached.get(k, ())]
        self.att_owner = np.array([p[0] for p in pairs], dtype=np.int64)
        self.att_idx = np.array([p[1] for p in pairs], dtype=np.int64)

    def apply(self, adj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Candidate (K, NB, 4) quaternions and (K, NB, 3) positions for adjustments (K, n, 6)."""
        kk = adj.shape[0]
        q = np.broadcast_to(self.base_q, (kk,) + self.base_q.shape).copy()
        t = np.broadcast_to(self.base_t, (kk,) + self.base_t.shape).copy()
        q0 = self.base_q[self.opt_idx]
        t0 = self.base_t[self.opt_idx]
        dq = rot.from_rotvec_batch(adj[:, :, 3:6])
        new_q = rot.multiply_batch(q0[None], dq)
        new_q /= np.linalg.norm(new_q, axis=-1, keepdims=True)
        new_t = t0[None] + adj[:, :, 0:3]
        q[:, self.opt_idx] = new_q
        t[:, self.opt_idx] = new_t
        if len(self.att_idx):
            # world-frame rotation of each owner: R0 exp(d) R0^T
            qw = rot.multiply_batch(new_q, rot.conjugate_batch(q0)[None])
            own_qw = qw[:, self.att_owner]
            rel = self.base_t[self.att_idx][None] - t0[self.att_owner][None]
            t[:, self.att_idx] = new_t[:, self.att_owner] + rot.rotate_batch(own_qw, rel)
            qa = rot.multiply_batch(own_qw, self.base_q[self.att_idx][None])
            q[:, self.att_idx] = qa / np.linalg.norm(qa, axis=-1, keepdims=True)
        return q, t

    def layout(self, adj: np.ndarray, base: Layout) -> Layout:
        q, t = self.apply(adj[None])
        poses = {k: Pose(q[0, i], t[0, i]) for i, k in enumerate(self.ids)}
        return base.replace(poses)


def cem_optimize(
    scene: Scene,
    base_layout: Layout,
    opt_ids: Sequence[str],
    fixed_ids=(),
    cem: CemConfig = CemConfig(),
    weights: EnergyWeights = EnergyWeights(),
    sim_config: SimConfig | None = None,
    *,
    attached: Mapping[str, Sequence[str]] | None = None,
    sim_ids: Sequence[str] | None = None,
    workers: int = 1,
    energy_hook: EnergyHook | None = None,
    keep_log: bool = False,
    label: str | None = None,
) -> CemResult:
    """Search adjustments of ``opt_ids`` minimising the settling energy.

    ``attached`` maps an optimised id to ids that move rigidly with it.
    ``sim_ids`` is the set of simulated objects (default: optimised, attached
    and fixed ids). With ``energy_hook`` the simulator is bypassed and the hook
    scores every batch.
    """
    opt_ids = list(opt_ids)
    fixed = set(fixed_ids)
    attached = {k: list(v) for k, v in (attached or {}).items()}
    if not opt_ids:
        raise InvalidArgumentError("opt_ids must not be empty")
    if fixed & set(opt_ids):
        raise InvalidArgumentError(f"ids both optimised and fixed: {sorted(fixed & set(opt_ids))}")
    if len(set(opt_ids)) != len(opt_ids):
        raise InvalidArgumentError("opt_ids contains duplicates")
    if sim_ids is None:
        sim_ids = list(opt_ids) + [a for k in opt_ids for a in attached.get(k, ())]
        sim_ids += sorted(fixed - set(sim_ids))
    sim_ids = list(sim_ids)
    missing = [k for k in sim_ids if k not in base_layout.poses]
    if missing:
        raise InvalidArgumentError(f"base layout is missing poses for {missing}")

    mover = Mover(sim_ids, base_layout, opt_ids, attached)
    sim = None
    dynamic = np.array([k not in fixed for k in sim_ids])
    if energy_hook is None:
        sim = Simulator(scene, sim_ids, fixed, sim_config)
        dynamic = sim.bodies.dynamic

    n = len(opt_ids)
    kk = cem.samples
    var0 = np.broadcast_to(np.maximum(cem.sigma0**2, SIGMA_FLOOR**2), (n, 6)).copy()
    best_total = np.inf
    best_adj = np.zeros((n, 6))
    best_report = None
    history: list[float] = []
    stats: list[dict] = []
    logs: list[IterationLog] | None = [] if keep_log else None

    for episode in range(cem.episodes):
        rng = np.random.default_rng([cem.seed, episode])
        mean = np.zeros((n, 6)) if episode == 0 else best_adj.copy()
        var = var0.copy()
        for it in range(cem.iterations):
            eps = rng.standard_normal((kk, n, 6))
            adj = mean[None] + np.sqrt(var)[None] * eps
            q, t = mover.apply(adj)
            if energy_hook is not None:
                totals = np.asarray(energy_hook(adj, q, t), dtype=float).reshape(kk)
                totals = np.where(np.isfinite(totals), totals, np.inf)
                energies = None
            else:
                res = sim.settle_batch(q, t, workers=workers)
                energies = batch_energies(res, q, t, mover.base_q, mover.base_t, dynamic, weights)
                totals = energies.total
                if res.diverged.any():
                    log.warning("%d of %d candidates diverged", int(res.diverged.sum()), kk)
            finite = np.flatnonzero(np.isfinite(totals))
            if len(finite) == 0:
                raise OptimizationFailedError(
                    f"every candidate diverged (episode {episode}, iteration {it})", label
                )
            order = finite[np.argsort(totals[finite], kind="stable")]
            elites = order[: cem.n_elite]
            i_best = int(order[0])
            if totals[i_best] < best_total:
                best_total = float(totals[i_best])
                best_adj = adj[i_best].copy()
                best_report = _report(energies, totals, i_best)
            mean = adj[elites].mean(axis=0)
            var = np.maximum(adj[elites].var(axis=0), SIGMA_FLOOR**2)
            history.append(best_total)
            stats.append({
                "episode": episode,
                "iteration": it,
                "best_total": best_total,
                "elite_mean_energy": float(totals[elites].mean()),
                "sigma_mean": float(np.sqrt(var).mean()),
            })
            log.debug("%s ep %d it %d best %.6g", label or "cem", episode, it, best_total)
            if logs is not None:
                logs.append(IterationLog(episode, it, adj, totals.copy(), elites, mean.copy(), var.copy()))

    return CemResult(
        best=mover.layout(best_adj, base_layout),
        best_adjustment=best_adj,
        best_energy=best_report,
        history=history,
        elite_stats=stats,
        log=logs,
    )


def _report(energies: BatchEnergies | None, totals: np.ndarray, i: int) -> EnergyReport:
    if energies is None:
        return EnergyReport(float("nan"), float("nan"), 0, float("nan"), float(totals[i]))
    return energies.report(i)
