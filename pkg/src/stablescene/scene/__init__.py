from stablescene.scene.io import (
    layout_from_dict,
    layout_to_dict,
    load_layout,
    load_scene,
    parse_scene,
    read_obj,
    save_layout,
)
from stablescene.scene.model import (
    Layout,
    LoadedScene,
    LocalGroup,
    NodeKind,
    Relation,
    Scene,
    SceneObject,
    SceneTree,
    Stage,
    SupportNode,
)
from stablescene.scene.tree import global_roots, local_groups, validate_tree

__all__ = [
    "Layout",
    "LoadedScene",
    "LocalGroup",
    "NodeKind",
    "Relation",
    "Scene",
    "SceneObject",
    "SceneTree",
    "Stage",
    "SupportNode",
    "global_roots",
    "layout_from_dict",
    "layout_to_dict",
    "load_layout",
    "load_scene",
    "local_groups",
    "parse_scene",
    "read_obj",
    "save_layout",
    "validate_tree",
]
