"""Scene-spec and layout files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from stablescene import jsonfmt
from stablescene.errors import (
    DegenerateGeometryError,
    InvalidArgumentError,
    MissingMeshError,
    SceneParseError,
    SceneValidationError,
)
from stablescene.geom import Pose, box, convex_hull
from stablescene.geom import rotation as rot
from stablescene.scene.model import (
    CANONICAL_KINDS,
    Layout,
    LoadedScene,
    NodeKind,
    Relation,
    Scene,
    SceneObject,
    Stage,
    SupportNode,
)
from stablescene.scene.tree import validate_tree


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and triangles of a Wavefront OBJ file; other directives are ignored."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    try:
        text = Path(path).read_text(encoding="utf-8", errors="replace")
    except FileNotFoundError as exc:
        raise MissingMeshError(f"mesh file not found: {path}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise SceneParseError(f"{path}:{lineno}: bad OBJ line {line!r}") from exc
    v = np.array(verts, dtype=float).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise SceneParseError(f"{path}: face index out of range")
    return v, f


def _no_duplicate_keys(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise _DuplicateKey(k)
        out[k] = v
    return out


class _DuplicateKey(Exception):
    pass


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise SceneParseError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"), object_pairs_hook=_no_duplicate_keys)
    except _DuplicateKey as exc:
        raise SceneValidationError("multiple-parents", "duplicate key in document", str(exc.args[0]))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SceneParseError(f"{path}: {exc}") from exc


def _floats(value, n: int, what: str, oid: str | None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        arr = None
    if arr is None or arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise SceneValidationError("invalid-field", f"{what} must be {n} finite numbers, got {value!r}", oid)
    return arr


def _parse_pose(entry, oid) -> Pose:
    if not isinstance(entry, dict) or "quat" not in entry or "pos" not in entry:
        raise SceneValidationError("invalid-field", "layout entry needs 'quat' and 'pos'", oid)
    q = _floats(entry["quat"], 4, "quat", oid)
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise SceneValidationError("invalid-quat", f"quaternion norm {np.linalg.norm(q):.9g} is not 1", oid)
    return Pose(q, _floats(entry["pos"], 3, "pos", oid))


def _parse_object(entry, base: Path) -> SceneObject:
    if not isinstance(entry, dict) or not isinstance(entry.get("id"), str):
        raise SceneValidationError("invalid-field", f"object entry needs a string 'id': {entry!r}")
    oid = entry["id"]
    scale = entry.get("scale", 1.0)
    if not isinstance(scale, (int, float)) or isinstance(scale, bool) or not scale > 0:
        raise SceneValidationError("invalid-scale", f"scale must be a positive number, got {scale!r}", oid)
    mass = entry.get("mass", 1.0)
    if not isinstance(mass, (int, float)) or isinstance(mass, bool) or not mass > 0:
        raise SceneValidationError("invalid-mass", f"mass must be a positive number, got {mass!r}", oid)
    movable = entry.get("movable", True)
    if not isinstance(movable, bool):
        raise SceneValidationError("invalid-field", "movable must be a boolean", oid)

    mesh = entry.get("mesh")
    box_size = entry.get("box")
    if isinstance(mesh, dict):
        box_size = mesh.get("box", box_size)
        mesh = None
    try:
        if entry.get("hulls"):
            hulls = []
            for i, pts in enumerate(entry["hulls"]):
                arr = np.asarray(pts, dtype=float)
                if arr.ndim != 2 or arr.shape[1] != 3:
                    raise SceneValidationError("invalid-field", f"hull {i} must be a list of [x, y, z]", oid)
                hulls.append(convex_hull(arr * scale))
        elif box_size is not None:
            hulls = [box(_floats(box_size, 3, "box", oid) * scale)]
        elif isinstance(mesh, str):
            mesh_path = Path(mesh)
            if not mesh_path.is_absolute():
                mesh_path = base / mesh_path
            if not mesh_path.exists():
                raise MissingMeshError(f"object {oid!r}: mesh file not found: {mesh_path}")
            verts, _ = read_obj(mesh_path)
            hulls = [convex_hull(verts * scale)]
        else:
            raise SceneValidationError("invalid-field", "object needs 'mesh', 'box' or 'hulls'", oid)
    except DegenerateGeometryError as exc:
        raise SceneValidationError("degenerate-hull", str(exc), oid) from exc
    return SceneObject(
        id=oid,
        name=str(entry.get("name", oid)),
        hulls=tuple(hulls),
        scale=float(scale),
        mass=float(mass),
        movable=movable,
    )


def _parse_node(entry, oid) -> SupportNode:
    if not isinstance(entry, dict) or not isinstance(entry.get("parent"), str):
        raise SceneValidationError("invalid-field", "tree entry needs a string 'parent'", oid)
    rel_s = entry.get("relation", "on")
    try:
        relation = Relation(rel_s)
    except ValueError:
        raise SceneValidationError("invalid-relation", f"unknown relation {rel_s!r}", oid) from None
    p = entry["parent"]
    if p in CANONICAL_KINDS:
        return SupportNode(CANONICAL_KINDS[p], relation)
    return SupportNode(NodeKind.OBJECT, relation, p)


def parse_scene(doc: dict, base: Path = Path(".")) -> LoadedScene:
    if not isinstance(doc, dict):
        raise SceneParseError("scene document must be a JSON object")
    for key in ("objects", "tree", "layout"):
        if key not in doc:
            raise SceneValidationError("invalid-field", f"missing top-level field {key!r}")
    if not isinstance(doc["objects"], list) or not isinstance(doc["tree"], dict) or not isinstance(doc["layout"], dict):
        raise SceneValidationError("invalid-field", "'objects' must be a list, 'tree' and 'layout' objects")
    objects: dict[str, SceneObject] = {}
    for entry in doc["objects"]:
        obj = _parse_object(entry, base)
        if obj.id in objects:
            raise SceneValidationError("duplicate-id", "object id appears twice", obj.id)
        objects[obj.id] = obj
    parents = {oid: _parse_node(e, oid) for oid, e in doc["tree"].items()}
    tree = validate_tree(parents, objects)
    poses = {}
    for oid in objects:
        if oid not in doc["layout"]:
            raise SceneValidationError("missing-pose", "object has no layout entry", oid)
        poses[oid] = _parse_pose(doc["layout"][oid], oid)
    for oid in doc["layout"]:
        if oid not in objects:
            raise SceneValidationError("unknown-object", "layout entry for an unknown object", oid)
    return LoadedScene(Scene(objects, tree), Layout(poses, Stage.RAW))


def load_scene(path) -> LoadedScene:
    """Read and validate a scene-spec file; mesh paths resolve relative to it."""
    path = Path(path)
    return parse_scene(_read_json(path), path.parent)


def layout_to_dict(layout: Layout) -> dict:
    entries = {}
    for oid, p in layout.poses.items():
        q = rot.canonical(p.quat)
        entries[oid] = {"quat": [float(c) for c in q], "pos": [float(c) for c in p.pos]}
    return {"layout": entries, "stage": layout.stage.label}


def layout_from_dict(doc: dict) -> Layout:
    if not isinstance(doc, dict) or not isinstance(doc.get("layout"), dict):
        raise SceneParseError("layout document needs a 'layout' object")
    stage = doc.get("stage", "raw")
    try:
        st = Stage.parse(stage)
    except KeyError:
        raise SceneValidationError("invalid-field", f"unknown stage {stage!r}") from None
    return Layout({k: _parse_pose(v, k) for k, v in doc["layout"].items()}, st)


def save_layout(layout: Layout, path) -> None:
    jsonfmt.write(path, layout_to_dict(layout))


def load_layout(path) -> Layout:
    return layout_from_dict(_read_json(path))


def dump_layout_text(layout: Layout) -> str:
    return jsonfmt.dumps(layout_to_dict(layout))


def check_layout_covers(scene: Scene, layout: Layout) -> None:
    missing = [k for k in scene.ids if k not in layout.poses]
    if missing:
        raise InvalidArgumentError(f"layout is missing poses for {missing}")
