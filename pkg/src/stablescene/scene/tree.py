"""Support-tree validation and traversal."""

from __future__ import annotations

from typing import Iterable, Mapping

from stablescene.errors import SceneValidationError
from stablescene.scene.model import LocalGroup, NodeKind, Relation, SceneTree, SupportNode

_MOUNT_RELATIONS = (Relation.HANGING, Relation.ATTACHED)


def validate_tree(parent: Mapping[str, SupportNode], object_ids: Iterable[str]) -> SceneTree:
    """Check the parent map against the object set and build a SceneTree.

    Raises SceneValidationError with codes ``missing-parent``, ``unknown-object``,
    ``dangling-parent``, ``cycle`` or ``hanging-under-ground``.
    """
    ids = set(object_ids)
    for oid in sorted(ids):
        if oid not in parent:
            raise SceneValidationError("missing-parent", "object has no tree entry", oid)
    for oid in sorted(parent):
        if oid not in ids:
            raise SceneValidationError("unknown-object", "tree entry for an unknown object", oid)
        node = parent[oid]
        if node.kind is NodeKind.OBJECT and node.parent_id not in ids:
            raise SceneValidationError(
                "dangling-parent", f"parent {node.parent_id!r} is not an object in the scene", oid
            )

    for oid in sorted(parent):
        seen = {oid}
        node = parent[oid]
        while node.kind is NodeKind.OBJECT:
            if node.parent_id in seen:
                raise SceneValidationError("cycle", f"cycle through {sorted(seen)}", oid)
            seen.add(node.parent_id)
            node = parent[node.parent_id]

    tree = SceneTree(dict(parent))
    for oid in tree.ids:
        node = tree.parent[oid]
        if node.relation not in _MOUNT_RELATIONS:
            continue
        if node.kind in (NodeKind.WALL, NodeKind.CEILING):
            continue
        if node.kind is NodeKind.OBJECT and tree.is_wall_rooted(node.parent_id):
            continue
        raise SceneValidationError(
            "hanging-under-ground",
            f"relation {node.relation.value!r} requires a wall or ceiling support, got {node.label()!r}",
            oid,
        )
    return tree


def local_groups(tree: SceneTree) -> list[LocalGroup]:
    """Groups of (node, direct children) in post-order; childless nodes are skipped."""
    out: list[LocalGroup] = []

    def visit(oid: str):
        kids = tree.children(oid)
        for c in kids:
            visit(c)
        if kids:
            out.append(LocalGroup(oid, kids))

    for r in tree.top_level():
        visit(r)
    return out


def global_roots(tree: SceneTree) -> list[str]:
    """Ground / ground-wall supported objects plus local-group roots, minus wall/ceiling mounts."""
    roots = {
        k for k, n in tree.parent.items() if n.kind in (NodeKind.GROUND, NodeKind.GROUND_WALL)
    }
    roots |= {g.root_id for g in local_groups(tree)}
    return sorted(r for r in roots if not tree.is_wall_rooted(r))
