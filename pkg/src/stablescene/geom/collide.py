"""Pairwise queries between posed convex hulls."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stablescene.errors import PreconditionError
from stablescene.geom import _kernels as K
from stablescene.geom.hull import ConvexHull
from stablescene.geom.rotation import Pose

CONTACT_EPSILON = 1e-5


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def volume(self) -> float:
        return float(np.prod(np.maximum(self.extent, 0.0)))

    def contains(self, points, tol: float = 0.0) -> bool:
        pts = np.atleast_2d(points)
        return bool(np.all(pts >= self.min - tol) and np.all(pts <= self.max + tol))

    def union(self, other: Aabb) -> Aabb:
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def iou(self, other: Aabb) -> float:
        lo = np.maximum(self.min, other.min)
        hi = np.minimum(self.max, other.max)
        inter = float(np.prod(np.maximum(hi - lo, 0.0)))
        union = self.volume + other.volume - inter
        return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class Penetration:
    depth: float
    normal: np.ndarray


def world_vertices(hull: ConvexHull, pose: Pose) -> np.ndarray:
    return K.transform_points(hull.vertices, pose.quat, pose.pos)


def aabb_of(hull: ConvexHull, pose: Pose) -> Aabb:
    w = world_vertices(hull, pose)
    return Aabb(w.min(axis=0), w.max(axis=0))


def gjk_distance(a: ConvexHull, pose_a: Pose, b: ConvexHull, pose_b: Pose) -> float:
    """Euclidean separation of two posed hulls; 0.0 when touching or overlapping."""
    va = world_vertices(a, pose_a)
    vb = world_vertices(b, pose_b)
    d1 = float(K.gjk_distance_kernel(va, vb))
    # evaluate both orders so the result is symmetric to the last bit
    d2 = float(K.gjk_distance_kernel(vb, va))
    return min(d1, d2)


def epa_penetration(a: ConvexHull, pose_a: Pose, b: ConvexHull, pose_b: Pose) -> Penetration:
    """Minimum translation separating overlapping hulls.

    Moving ``b`` by ``depth * normal`` leaves the hulls touching.
    """
    va = world_vertices(a, pose_a)
    vb = world_vertices(b, pose_b)
    dist, v, n, w, wa, wb, lam = K.gjk(va, vb)
    if dist > 0.0:
        raise PreconditionError(f"hulls are disjoint (distance {dist:.3g} m)")
    ok, depth, normal, _, _ = K.epa(va, vb, w, wa, wb, n)
    if not ok:
        # touching along a lower-dimensional feature
        return Penetration(0.0, np.array([1.0, 0.0, 0.0]))
    return Penetration(float(depth), np.asarray(normal, dtype=float))


def hulls_intersect(
    a: ConvexHull, pose_a: Pose, b: ConvexHull, pose_b: Pose, eps: float = CONTACT_EPSILON
) -> bool:
    """True when the hulls overlap by more than ``eps``; resting contact is not an intersection."""
    va = world_vertices(a, pose_a)
    vb = world_vertices(b, pose_b)
    return bool(K.intersect_kernel(va, vb, eps))
