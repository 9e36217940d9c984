"""Gravity alignment and support snapping of a raw reconstructed layout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from stablescene.errors import NoAnchorError
from stablescene.geom import Pose, world_vertices
from stablescene.geom import rotation as rot
from stablescene.scene import Layout, NodeKind, Relation, Scene, Stage

WORLD_UP = np.array([0.0, 1.0, 0.0])
CONSENSUS_ANGLE = np.deg2rad(15.0)
SNAP_GAP = 1e-4
# target clearance after snapping; strictly inside [0, SNAP_GAP] so round-off never goes negative
SNAP_TARGET = 1e-6


@dataclass(frozen=True)
class UpEstimate:
    direction: np.ndarray
    confidence: float


def anchor_ids(scene: Scene) -> list[str]:
    return [
        k for k, n in scene.tree.parent.items() if n.kind in (NodeKind.GROUND, NodeKind.GROUND_WALL)
    ]


def estimate_up(scene: Scene, raw_layout: Layout) -> UpEstimate:
    """Volume-weighted mean of the ground anchors' body +Y axes."""
    anchors = anchor_ids(scene)
    if not anchors:
        raise NoAnchorError("no ground-supported objects to estimate the up direction from")
    ups = np.array([rot.rotate(raw_layout[k].quat, WORLD_UP) for k in anchors])
    weights = np.array([scene[k].volume for k in anchors])
    mean = (weights[:, None] * ups).sum(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise NoAnchorError("anchor up axes cancel out; up direction is undefined")
    direction = mean / norm
    agree = np.arccos(np.clip(ups @ direction, -1.0, 1.0)) <= CONSENSUS_ANGLE
    return UpEstimate(direction, float(np.mean(agree)))


def reorient_scene(raw_layout: Layout, up: UpEstimate) -> Layout:
    """Rigidly rotate the whole layout about the world origin so ``up`` maps to +Y."""
    q = rot.from_two_vectors(up.direction, WORLD_UP)
    if np.array_equal(q, rot.IDENTITY):
        return raw_layout.replace(stage=Stage.CANONICAL)
    r = rot.to_matrix(q)
    poses = {
        k: Pose(rot.normalize(rot.multiply(q, p.quat)), r @ p.pos) for k, p in raw_layout.poses.items()
    }
    return Layout(poses, Stage.CANONICAL)


def _hull_max_height(planes: np.ndarray, x_rng, z_rng) -> float | None:
    """Highest Y of a world-space hull restricted to an XZ rectangle, by linear programming."""
    res = linprog(
        c=[0.0, -1.0, 0.0],
        A_ub=planes[:, :3],
        b_ub=planes[:, 3],
        bounds=[x_rng, (None, None), z_rng],
        method="highs",
    )
    if res.status != 0:
        return None
    return float(res.x[1])


def _world_planes(hull, pose: Pose) -> np.ndarray:
    r = pose.matrix
    n = hull.planes[:, :3] @ r.T
    d = hull.planes[:, 3] + n @ pose.pos
    return np.concatenate([n, d[:, None]], axis=1)


def support_height(scene: Scene, layout: Layout, parent_id: str, child_id: str) -> float:
    """Top of the parent's surface under the child's horizontal footprint.

    Uses the parent's highest point inside the overlap of both XZ footprints, or the
    parent's bounding-box top when the footprints do not overlap.
    """
    parent = scene[parent_id]
    pbox = parent.aabb(layout[parent_id])
    cbox = scene[child_id].aabb(layout[child_id])
    lo = np.maximum(pbox.min, cbox.min)
    hi = np.minimum(pbox.max, cbox.max)
    if lo[0] > hi[0] or lo[2] > hi[2]:
        return float(pbox.max[1])
    best = None
    for h in parent.hulls:
        top = _hull_max_height(_world_planes(h, layout[parent_id]), (lo[0], hi[0]), (lo[2], hi[2]))
        if top is not None and (best is None or top > best):
            best = top
    return float(pbox.max[1]) if best is None else best


def lowest_point(scene: Scene, layout: Layout, oid: str) -> float:
    return float(min(world_vertices(h, layout[oid])[:, 1].min() for h in scene[oid].hulls))


def snap_supports(scene: Scene, layout: Layout) -> Layout:
    """Move each supported object vertically onto its support, parents first.

    Ground and ground-wall children rest on Y = 0; on/inside children rest on the
    parent's surface under their footprint. Only Y translations change; mounted
    (hanging/attached) and wall/ceiling children are left alone.
    """
    tree = scene.tree
    poses = dict(layout.poses)
    for oid in tree.preorder():
        node = tree.parent[oid]
        if node.relation not in (Relation.ON, Relation.INSIDE):
            continue
        current = Layout(poses, layout.stage)
        if node.kind in (NodeKind.GROUND, NodeKind.GROUND_WALL):
            target = 0.0
        elif node.kind is NodeKind.OBJECT:
            target = support_height(scene, current, node.parent_id, oid)
        else:
            continue
        dy = target + SNAP_TARGET - lowest_point(scene, current, oid)
        p = poses[oid]
        poses[oid] = Pose(p.quat, p.pos + np.array([0.0, dy, 0.0]))
    return Layout(poses, Stage.CANONICAL)


def canonicalize(scene: Scene, raw_layout: Layout) -> tuple[Layout, UpEstimate]:
    up = estimate_up(scene, raw_layout)
    return snap_supports(scene, reorient_scene(raw_layout, up)), up
