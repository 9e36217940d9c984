"""Physical and geometric metrics for layouts.

Chamfer distance uses the squared-distance convention: the mean squared
nearest-neighbour distance from each set to the other, summed over both
directions. Collision rate counts objects touched by at least one
intersecting pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from stablescene.errors import InvalidArgumentError, SceneParseError
from stablescene.geom import Aabb
from stablescene.scene import Layout, Scene, read_obj
from stablescene.sim import SimTrace, Simulator, is_stable

CHAMFER_CONVENTION = "mean squared nearest-neighbour distance, summed over both directions"
COLLISION_CONVENTION = "percent of objects in at least one intersecting pair"
FSCORE_THRESHOLD = 0.05


@dataclass(frozen=True)
class PhysReport:
    collision_rate: float
    stable_rate: float
    pos_drift: float
    peak_lin_vel: float
    peak_ang_vel: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["collision_rate_convention"] = COLLISION_CONVENTION
        return d


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    rms_history: list[float]
    iterations: int


@dataclass(frozen=True)
class GeoReport:
    chamfer: float
    fscore: float
    biou: float
    icp_transform: RigidTransform

    def to_dict(self) -> dict:
        return {
            "chamfer": self.chamfer,
            "chamfer_convention": CHAMFER_CONVENTION,
            "fscore": self.fscore,
            "fscore_threshold": FSCORE_THRESHOLD,
            "biou": self.biou,
            "icp_transform": self.icp_transform.matrix().tolist(),
        }


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray
    source: str = "external"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise InvalidArgumentError(f"a point set needs a non-empty (n, 3) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def _as_points(p) -> np.ndarray:
    return p.points if isinstance(p, PointSet) else PointSet(p).points


def phys_metrics(scene: Scene, layout: Layout, trace: SimTrace) -> PhysReport:
    ids = trace.ids
    _, flags = Simulator(scene, ids, ()).count_intersections(layout)
    stable = is_stable(trace)
    dyn = [k for k in ids if trace.initial[k].dynamic]
    drift = [float(np.linalg.norm(trace.final[k].pose.pos - trace.initial[k].pose.pos)) for k in dyn]
    n = len(ids)
    return PhysReport(
        collision_rate=100.0 * sum(flags.values()) / n if n else 0.0,
        stable_rate=100.0 * sum(stable.values()) / n if n else 100.0,
        pos_drift=float(np.mean(drift)) if dyn else 0.0,
        peak_lin_vel=float(np.mean([trace.peak_lin_vel[k] for k in dyn])) if dyn else 0.0,
        peak_ang_vel=float(np.mean([trace.peak_ang_vel[k] for k in dyn])) if dyn else 0.0,
    )


def sample_triangles(verts: np.ndarray, tris: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on a triangle soup."""
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    if area.sum() <= 0:
        raise InvalidArgumentError("surface has zero area")
    pick = rng.choice(len(tris), size=n, p=area / area.sum())
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    return (1 - r1) * a[pick] + r1 * (1 - r2) * b[pick] + r1 * r2 * c[pick]


def sample_scene(scene: Scene, layout: Layout, n: int = 100_000, seed: int = 0, ids=None) -> PointSet:
    verts, tris = [], []
    offset = 0
    for k in scene.ids if ids is None else ids:
        for h in scene[k].hulls:
            verts.append(layout[k].apply(h.vertices))
            tris.append(h.faces + offset)
            offset += len(h.vertices)
    if not verts:
        raise InvalidArgumentError("nothing to sample")
    rng = np.random.default_rng(seed)
    return PointSet(sample_triangles(np.concatenate(verts), np.concatenate(tris), n, rng), "sampled-from-scene")


def load_points(path, n: int = 100_000, seed: int = 0) -> PointSet:
    """Ground truth from an OBJ mesh (sampled) or a whitespace-separated XYZ file."""
    path = Path(path)
    if not path.exists():
        raise SceneParseError(f"ground truth not found: {path}")
    if path.suffix.lower() == ".obj":
        verts, tris = read_obj(path)
        if len(tris) == 0:
            return PointSet(verts, "external")
        return PointSet(sample_triangles(verts, tris, n, np.random.default_rng(seed)), "external")
    try:
        pts = np.loadtxt(path, dtype=float, ndmin=2, usecols=(0, 1, 2))
    except (ValueError, IndexError) as exc:
        raise SceneParseError(f"{path}: cannot read points: {exc}") from exc
    return PointSet(pts, "external")


def _kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def icp_align(src, dst, max_iters: int = 50, tol: float = 1e-6) -> IcpResult:
    """Point-to-point ICP moving ``src`` onto ``dst``; returns the lowest-RMS transform found."""
    a = _as_points(src)
    b = _as_points(dst)
    tree = cKDTree(b)
    current = RigidTransform.identity()
    d, idx = tree.query(a)
    rms = float(np.sqrt(np.mean(d**2)))
    history = [rms]
    best = current
    it = 0
    for it in range(1, max_iters + 1):
        # fitting against the original points keeps each step's residual no larger than the last
        cand = _kabsch(a, b[idx])
        d, idx_new = tree.query(cand.apply(a))
        new_rms = float(np.sqrt(np.mean(d**2)))
        if new_rms > rms:
            break
        current, idx = cand, idx_new
        history.append(new_rms)
        best = current
        done = rms - new_rms < tol
        rms = new_rms
        if done:
            break
    return IcpResult(best, history, it)


def nearest_distances(a, b) -> np.ndarray:
    return cKDTree(_as_points(b)).query(_as_points(a))[0]


def chamfer(src, dst) -> float:
    return float(np.mean(nearest_distances(src, dst) ** 2) + np.mean(nearest_distances(dst, src) ** 2))


def fscore(src, dst, thresh: float = FSCORE_THRESHOLD) -> float:
    precision = float(np.mean(nearest_distances(src, dst) <= thresh))
    recall = float(np.mean(nearest_distances(dst, src) <= thresh))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _scene_box(scene: Scene, layout: Layout, ids) -> Aabb:
    boxes = [scene[k].aabb(layout[k]) for k in ids]
    out = boxes[0]
    for b in boxes[1:]:
        out = out.union(b)
    return out


def biou(scene_a: Scene, layout_a: Layout, scene_b: Scene, layout_b: Layout) -> float:
    """Mean AABB IoU over objects matched by id, or whole-scene IoU when no ids match."""
    if not scene_a.ids or not scene_b.ids:
        raise InvalidArgumentError("both scenes need at least one object")
    common = [k for k in scene_a.ids if k in scene_b.objects]
    if not common:
        return _scene_box(scene_a, layout_a, scene_a.ids).iou(_scene_box(scene_b, layout_b, scene_b.ids))
    return float(np.mean([scene_a[k].aabb(layout_a[k]).iou(scene_b[k].aabb(layout_b[k])) for k in common]))


def geometric_metrics(pred: PointSet, gt: PointSet, biou_value: float, align: bool = True) -> GeoReport:
    transform = icp_align(pred, gt).transform if align else RigidTransform.identity()
    moved = PointSet(transform.apply(pred.points), pred.source)
    return GeoReport(chamfer(moved, gt), fscore(moved, gt), biou_value, transform)


def points_box(p: PointSet) -> Aabb:
    return Aabb(p.points.min(axis=0), p.points.max(axis=0))


__all__ = [
    "CHAMFER_CONVENTION",
    "GeoReport",
    "IcpResult",
    "PhysReport",
    "PointSet",
    "RigidTransform",
    "biou",
    "chamfer",
    "fscore",
    "geometric_metrics",
    "icp_align",
    "load_points",
    "nearest_distances",
    "phys_metrics",
    "points_box",
    "sample_scene",
    "sample_triangles",
]
