"""Independent oracles and shared builders for the test suite.

Nothing here calls the code under test for the quantity being checked; the
oracles use plain numpy/scipy formulations.
"""

from __future__ import annotations

import functools
import os

import numpy as np
from scipy.optimize import linprog

from stablescene import canon, fixtures
from stablescene.geom import Pose, convex_hull
from stablescene.scene import NodeKind, Relation, parse_scene

# quaternions and matrices, written out independently of stablescene.geom.rotation


def quat_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def trace_angle(qa, qb) -> float:
    r = quat_matrix(qa).T @ quat_matrix(qb)
    return float(np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)))


def random_quat(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def axis_angle_quat(axis, angle) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * a])


def random_hull(rng: np.random.Generator, size: float = 1.0):
    n = int(rng.integers(6, 16))
    ext = rng.uniform(0.2, 1.0, 3) * size
    return convex_hull(rng.uniform(-0.5, 0.5, (n, 3)) * ext)


def random_pose(rng: np.random.Generator, spread: float = 1.0) -> Pose:
    return Pose(random_quat(rng), rng.uniform(-spread, spread, 3))


# world-space half-spaces of a posed hull: rows (n, d) with n . x <= d inside


def world_planes(hull, pose: Pose) -> np.ndarray:
    r = quat_matrix(pose.quat)
    verts = hull.vertices @ r.T + pose.pos
    out = []
    for tri in hull.faces:
        a, b, c = verts[tri]
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n)
        out.append(np.concatenate([n, [n @ a]]))
    return np.array(out)


def world_verts(hull, pose: Pose) -> np.ndarray:
    return hull.vertices @ quat_matrix(pose.quat).T + pose.pos


def _intersection_box(planes: np.ndarray):
    """Bounding box of the polytope {x : n . x <= d}, or None when it is empty."""
    lo, hi = np.empty(3), np.empty(3)
    for axis in range(3):
        for sign, dst in ((1.0, lo), (-1.0, hi)):
            c = np.zeros(3)
            c[axis] = sign
            res = linprog(c, A_ub=planes[:, :3], b_ub=planes[:, 3], bounds=[(None, None)] * 3, method="highs")
            if res.status == 2:
                return None
            assert res.status == 0
            dst[axis] = res.x[axis]
    return lo, hi


def mc_overlap(ha, pa, hb, pb, n: int, rng: np.random.Generator) -> bool:
    """Monte-Carlo containment oracle: does any sample fall inside both hulls?

    Samples are drawn uniformly from the bounding box of the intersection
    polytope so that shallow overlaps still receive samples.
    """
    planes = np.vstack([world_planes(ha, pa), world_planes(hb, pb)])
    box = _intersection_box(planes)
    if box is None:
        return False
    pts = rng.uniform(box[0], box[1], (n, 3))
    return bool(np.all(pts @ planes[:, :3].T <= planes[:, 3], axis=1).any())


def lp_margin(ha, pa, hb, pb) -> float:
    """Largest t such that some point lies at least t inside every face of both hulls.

    Positive for overlapping hulls, negative for separated ones, and zero
    exactly at touching contact.
    """
    planes = np.vstack([world_planes(ha, pa), world_planes(hb, pb)])
    a_ub = np.hstack([planes[:, :3], np.ones((len(planes), 1))])
    res = linprog([0, 0, 0, -1], A_ub=a_ub, b_ub=planes[:, 3], bounds=[(None, None)] * 3 + [(-10, 10)],
                  method="highs")
    assert res.status == 0
    return float(res.x[3])


def brute_nn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every point of a to its nearest point in b, O(n^2)."""
    out = np.empty(len(a))
    for i in range(0, len(a), 256):
        d = np.sqrt(((a[i:i + 256, None, :] - b[None, :, :]) ** 2).sum(-1))
        out[i:i + 256] = d.min(1)
    return out


# pipeline runs are expensive; share them across tests in one session

CI_SAMPLES = 256
PAPER_SAMPLES = 2048


def full_budget() -> bool:
    return os.environ.get("STABLESCENE_FULL", "") not in ("", "0")


def load_fixture(template: str, seed: int = 0, **params):
    return parse_scene(fixtures.generate(template, seed=seed, **params))


@functools.lru_cache(maxsize=None)
def pipeline_run(template: str, fixture_seed: int = 0, cem_seed: int = 0, samples: int = CI_SAMPLES,
                 weights: tuple = ()):
    from stablescene.opt import CemConfig, EnergyWeights, PipelineConfig, run_pipeline

    loaded = load_fixture(template, fixture_seed)
    cfg = PipelineConfig(cem=CemConfig(samples=samples, seed=cem_seed), weights=EnergyWeights(**dict(weights)))
    res = run_pipeline(loaded.scene, loaded.raw_layout, cfg)
    return loaded.scene, res


def xz_deviation(final, cano, ids) -> float:
    return float(np.mean([np.linalg.norm((final[k].pos - cano[k].pos)[[0, 2]]) for k in ids]))


def intersecting_pairs(scene, layout) -> list[tuple[str, str]]:
    from stablescene.geom import hulls_intersect

    ids = scene.ids
    out = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if any(hulls_intersect(ha, layout[a], hb, layout[b]) for ha in scene[a].hulls for hb in scene[b].hulls):
                out.append((a, b))
    return out


# canonicalization oracles


def lowest_y(scene, layout, oid):
    return min((h.vertices @ quat_matrix(layout[oid].quat).T + layout[oid].pos)[:, 1].min() for h in scene[oid].hulls)


def highest_y(scene, layout, oid):
    return max((h.vertices @ quat_matrix(layout[oid].quat).T + layout[oid].pos)[:, 1].max() for h in scene[oid].hulls)


def clearances(scene, layout):
    """Vertical gap of every on/inside child over its support (vertex oracle, upright parents)."""
    out = {}
    for oid, n in scene.tree.parent.items():
        if n.relation not in (Relation.ON, Relation.INSIDE):
            continue
        if n.kind in (NodeKind.GROUND, NodeKind.GROUND_WALL):
            out[oid] = lowest_y(scene, layout, oid)
        elif n.kind is NodeKind.OBJECT:
            out[oid] = lowest_y(scene, layout, oid) - highest_y(scene, layout, n.parent_id)
    return out


def up_error_deg(scene, layout):
    worst = 0.0
    for k in canon.anchor_ids(scene):
        y = quat_matrix(layout[k].quat) @ [0.0, 1.0, 0.0]
        worst = max(worst, np.degrees(np.arccos(np.clip(y[1], -1, 1))))
    return worst
