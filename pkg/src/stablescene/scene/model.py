"""Scene objects, the support tree and layouts."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from stablescene.errors import SceneValidationError
from stablescene.geom import Aabb, ConvexHull, Pose, aabb_of


class NodeKind(enum.Enum):
    GROUND = "ground"
    WALL = "wall"
    CEILING = "ceiling"
    GROUND_WALL = "ground_wall"
    OBJECT = "object"


class Relation(enum.Enum):
    ON = "on"
    INSIDE = "inside"
    HANGING = "hanging"
    ATTACHED = "attached"


class Stage(enum.IntEnum):
    RAW = 0
    CANONICAL = 1
    OPTIMIZED = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, s: str) -> Stage:
        return cls[s.upper()]


CANONICAL_KINDS = {k.value: k for k in NodeKind if k is not NodeKind.OBJECT}


@dataclass(frozen=True)
class SupportNode:
    kind: NodeKind
    relation: Relation = Relation.ON
    parent_id: str | None = None  # set iff kind is OBJECT

    @property
    def is_canonical(self) -> bool:
        return self.kind is not NodeKind.OBJECT

    def label(self) -> str:
        return self.parent_id if self.kind is NodeKind.OBJECT else self.kind.value


@dataclass(frozen=True, eq=False)
class SceneObject:
    id: str
    name: str
    hulls: tuple[ConvexHull, ...]
    scale: float = 1.0
    mass: float = 1.0
    movable: bool = True

    def __post_init__(self):
        if not self.hulls:
            raise SceneValidationError("no-hulls", "object needs at least one hull", self.id)
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise SceneValidationError("invalid-scale", f"scale must be > 0, got {self.scale}", self.id)
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise SceneValidationError("invalid-mass", f"mass must be > 0, got {self.mass}", self.id)

    @property
    def volume(self) -> float:
        return float(sum(h.volume for h in self.hulls))

    @property
    def centroid(self) -> np.ndarray:
        """Volume-weighted centroid of all hulls (body frame)."""
        w = np.array([h.volume for h in self.hulls])
        c = np.array([h.centroid for h in self.hulls])
        return (w[:, None] * c).sum(axis=0) / w.sum()

    def vertices(self) -> np.ndarray:
        return np.vstack([h.vertices for h in self.hulls])

    def aabb(self, pose: Pose) -> Aabb:
        boxes = [aabb_of(h, pose) for h in self.hulls]
        out = boxes[0]
        for b in boxes[1:]:
            out = out.union(b)
        return out


@dataclass(frozen=True, eq=False)
class SceneTree:
    """Support forest: every object maps to exactly one parent node."""

    parent: Mapping[str, SupportNode]
    _children: Mapping[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        parent = dict(sorted(self.parent.items()))
        children: dict[str, list[str]] = {k: [] for k in parent}
        for oid, node in parent.items():
            if node.kind is NodeKind.OBJECT and node.parent_id in children:
                children[node.parent_id].append(oid)
        object.__setattr__(self, "parent", MappingProxyType(parent))
        object.__setattr__(
            self, "_children", MappingProxyType({k: tuple(sorted(v)) for k, v in children.items()})
        )

    @property
    def ids(self) -> list[str]:
        return list(self.parent)

    def children(self, oid: str) -> tuple[str, ...]:
        return self._children[oid]

    def top_level(self) -> list[str]:
        return [k for k, n in self.parent.items() if n.is_canonical]

    def ancestors(self, oid: str) -> list[str]:
        out = []
        node = self.parent[oid]
        while node.kind is NodeKind.OBJECT:
            out.append(node.parent_id)
            node = self.parent[node.parent_id]
        return out

    def root_kind(self, oid: str) -> NodeKind:
        """Canonical node at the end of ``oid``'s parent chain."""
        node = self.parent[oid]
        while node.kind is NodeKind.OBJECT:
            node = self.parent[node.parent_id]
        return node.kind

    def top_ancestor(self, oid: str) -> str:
        chain = self.ancestors(oid)
        return chain[-1] if chain else oid

    def descendants(self, oid: str) -> list[str]:
        out = []
        stack = list(reversed(self.children(oid)))
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(reversed(self.children(c)))
        return out

    def preorder(self) -> list[str]:
        out = []
        for r in self.top_level():
            out.append(r)
            out.extend(self.descendants(r))
        return out

    def is_wall_rooted(self, oid: str) -> bool:
        return self.root_kind(oid) in (NodeKind.WALL, NodeKind.CEILING)


@dataclass(frozen=True, eq=False)
class Layout:
    poses: Mapping[str, Pose]
    stage: Stage = Stage.RAW

    def __post_init__(self):
        object.__setattr__(self, "poses", MappingProxyType(dict(sorted(self.poses.items()))))
        object.__setattr__(self, "stage", Stage(self.stage))

    def __getitem__(self, oid: str) -> Pose:
        return self.poses[oid]

    @property
    def ids(self) -> list[str]:
        return list(self.poses)

    def replace(self, updates: Mapping[str, Pose] | None = None, stage: Stage | None = None) -> Layout:
        poses = dict(self.poses)
        if updates:
            poses.update(updates)
        return Layout(poses, self.stage if stage is None else stage)

    def canonical(self) -> Layout:
        return Layout({k: p.canonical() for k, p in self.poses.items()}, self.stage)

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return self.stage == other.stage and dict(self.poses) == dict(other.poses)

    def max_difference(self, other: Layout) -> float:
        """Largest absolute component difference between matching poses (quaternion sign ignored)."""
        worst = 0.0
        for k, p in self.poses.items():
            q = other[k]
            dq = min(np.max(np.abs(p.quat - q.quat)), np.max(np.abs(p.quat + q.quat)))
            worst = max(worst, float(dq), float(np.max(np.abs(p.pos - q.pos))))
        return worst


@dataclass(frozen=True)
class LocalGroup:
    root_id: str
    child_ids: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class Scene:
    objects: Mapping[str, SceneObject]
    tree: SceneTree

    def __post_init__(self):
        object.__setattr__(self, "objects", MappingProxyType(dict(sorted(self.objects.items()))))

    @classmethod
    def from_objects(cls, objects: Iterable[SceneObject], tree: SceneTree) -> Scene:
        return cls({o.id: o for o in objects}, tree)

    @property
    def ids(self) -> list[str]:
        return list(self.objects)

    def __getitem__(self, oid: str) -> SceneObject:
        return self.objects[oid]

    def wall_ids(self) -> list[str]:
        """Objects whose support chain ends at a wall or the ceiling."""
        return [k for k in self.ids if self.tree.is_wall_rooted(k)]

    def immovable_ids(self) -> set[str]:
        return {k for k, o in self.objects.items() if not o.movable} | set(self.wall_ids())


@dataclass(frozen=True, eq=False)
class LoadedScene:
    scene: Scene
    raw_layout: Layout

    @property
    def objects(self) -> list[SceneObject]:
        return list(self.scene.objects.values())

    @property
    def tree(self) -> SceneTree:
        return self.scene.tree
