"""Convex hulls with polygonal faces and uniform-density mass properties."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull as _QHull
from scipy.spatial import QhullError

from stablescene.errors import DegenerateGeometryError

COPLANAR_TOL = 1e-9
_MERGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConvexHull:
    """Convex polytope in body frame.

    ``faces`` is an outward-wound triangulation; ``polygons`` groups coplanar
    triangles into convex faces (counter-clockwise seen from outside) and
    ``planes`` holds the matching outward unit normals and offsets (n . x = d).
    """

    vertices: np.ndarray
    faces: np.ndarray
    centroid: np.ndarray
    volume: float
    polygons: tuple = field(repr=False)
    planes: np.ndarray = field(repr=False)
    inertia: np.ndarray = field(repr=False)  # about centroid, unit density

    def __post_init__(self):
        for name in ("vertices", "faces", "centroid", "planes", "inertia"):
            getattr(self, name).flags.writeable = False

    def scaled(self, s: float) -> ConvexHull:
        return convex_hull(self.vertices * s)

    def transformed(self, rot: np.ndarray, offset) -> ConvexHull:
        return convex_hull(self.vertices @ np.asarray(rot).T + np.asarray(offset))

    def signed_distances(self, points) -> np.ndarray:
        """Max over face planes of n . p - d; positive outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.max(pts @ self.planes[:, :3].T - self.planes[:, 3], axis=1)


def _check_not_coplanar(pts: np.ndarray):
    if len(pts) < 4:
        raise DegenerateGeometryError(f"convex hull needs >= 4 points, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    if np.max(np.abs(centered @ normal)) <= COPLANAR_TOL:
        raise DegenerateGeometryError("points are coplanar; hull has no volume")


def _mass_properties(verts: np.ndarray, tris: np.ndarray):
    ref = verts.mean(axis=0)
    a = verts[tris[:, 0]] - ref
    b = verts[tris[:, 1]] - ref
    c = verts[tris[:, 2]] - ref
    det = np.einsum("ij,ij->i", a, np.cross(b, c))
    vol = det.sum() / 6.0
    cen = ((a + b + c) * det[:, None]).sum(axis=0) / (24.0 * vol)
    canon = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 120.0
    cov = np.zeros((3, 3))
    for ai, bi, ci, di in zip(a, b, c, det):
        m = np.stack([ai, bi, ci], axis=1)
        cov += di * (m @ canon @ m.T)
    cov -= vol * np.outer(cen, cen)
    inertia = np.trace(cov) * np.eye(3) - cov
    return float(vol), cen + ref, inertia


def _merge_faces(verts: np.ndarray, tris: np.ndarray, eqs: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(verts))))
    groups: list[list[int]] = []
    reps: list[np.ndarray] = []
    for i, eq in enumerate(eqs):
        for g, rep in enumerate(reps):
            if np.dot(rep[:3], eq[:3]) > 1.0 - _MERGE_TOL and abs(rep[3] - eq[3]) < _MERGE_TOL * scale:
                groups[g].append(i)
                break
        else:
            groups.append([i])
            reps.append(eq)
    polygons = []
    planes = []
    for g, rep in zip(groups, reps):
        n = rep[:3] / np.linalg.norm(rep[:3])
        idx = np.unique(tris[g].ravel())
        pts = verts[idx]
        c = pts.mean(axis=0)
        u = pts[0] - c
        if np.linalg.norm(u) < 1e-300:
            u = pts[1] - c
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        ang = np.arctan2((pts - c) @ v, (pts - c) @ u)
        order = idx[np.argsort(ang, kind="stable")]
        polygons.append(order.astype(np.int64))
        planes.append(np.concatenate([n, [float(np.mean(verts[order] @ n))]]))
    return tuple(polygons), np.array(planes)


def convex_hull(points) -> ConvexHull:
    """Convex hull of a 3D point set; interior and duplicate points are discarded."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DegenerateGeometryError(f"expected (n, 3) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateGeometryError("points must be finite")
    _check_not_coplanar(pts)
    try:
        qh = _QHull(pts)
    except QhullError as exc:
        raise DegenerateGeometryError(f"qhull failed: {exc}") from exc
    keep = np.sort(qh.vertices)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    verts = pts[keep].copy()
    tris = remap[qh.simplices]
    eqs = qh.equations
    # orient every triangle along its outward facet normal
    for i, (t, eq) in enumerate(zip(tris, eqs)):
        n = np.cross(verts[t[1]] - verts[t[0]], verts[t[2]] - verts[t[0]])
        if np.dot(n, eq[:3]) < 0:
            tris[i] = t[[0, 2, 1]]
    # qhull stores n . x + offset <= 0 inside
    planes_eq = np.concatenate([eqs[:, :3], -eqs[:, 3:4]], axis=1)
    polygons, planes = _merge_faces(verts, tris, planes_eq)
    vol, cen, inertia = _mass_properties(verts, tris)
    if vol <= 0:
        raise DegenerateGeometryError("hull has non-positive volume")
    return ConvexHull(
        vertices=verts,
        faces=tris.astype(np.int64),
        centroid=cen,
        volume=vol,
        polygons=polygons,
        planes=planes,
        inertia=inertia,
    )


def box_points(extents, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    h = 0.5 * np.asarray(extents, dtype=float)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    return signs * h + np.asarray(center, dtype=float)


def box(extents, center=(0.0, 0.0, 0.0)) -> ConvexHull:
    """Axis-aligned box hull with full side lengths ``extents``."""
    return convex_hull(box_points(extents, center))


def cylinder(radius: float, height: float, segments: int = 12, center=(0.0, 0.0, 0.0)) -> ConvexHull:
    """Prism approximating a Y-axis cylinder."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), np.zeros(segments), radius * np.sin(ang)], axis=1)
    lo = ring + [0.0, -0.5 * height, 0.0]
    hi = ring + [0.0, 0.5 * height, 0.0]
    return convex_hull(np.vstack([lo, hi]) + np.asarray(center, dtype=float))
