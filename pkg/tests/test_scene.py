import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import load_fixture, random_quat
from stablescene import fixtures
from stablescene.errors import MissingMeshError, SceneParseError, SceneValidationError
from stablescene.geom import Pose
from stablescene.scene import (
    Layout,
    NodeKind,
    Relation,
    Stage,
    SupportNode,
    global_roots,
    load_layout,
    load_scene,
    local_groups,
    parse_scene,
    read_obj,
    save_layout,
    validate_tree,
)


def obj(oid, size=(0.5, 0.5, 0.5), **extra):
    return {"id": oid, "box": list(size), **extra}


def pose(y=0.25):
    return {"quat": [1, 0, 0, 0], "pos": [0, y, 0]}


def doc(objects, tree, layout=None):
    layout = layout or {o["id"]: pose() for o in objects}
    return {"objects": objects, "tree": tree, "layout": layout}


def node(parent, relation="on"):
    kinds = {"ground": NodeKind.GROUND, "wall": NodeKind.WALL, "ceiling": NodeKind.CEILING,
             "ground_wall": NodeKind.GROUND_WALL}
    if parent in kinds:
        return SupportNode(kinds[parent], Relation(relation))
    return SupportNode(NodeKind.OBJECT, Relation(relation), parent)


@st.composite
def forests(draw, max_nodes=20):
    """Random support forests: node i hangs off a canonical root or an earlier node."""
    n = draw(st.integers(1, max_nodes))
    parents = {}
    for i in range(n):
        choices = ["ground", "ground_wall", "wall", "ceiling"] + [f"n{j:02d}" for j in range(i)]
        parents[f"n{i:02d}"] = draw(st.sampled_from(choices))
    return parents


def build_tree(parents):
    return validate_tree({k: node(p) if p not in ("wall", "ceiling") else node(p, "attached")
                          for k, p in parents.items()}, parents)


class TestLoad:
    def test_minimal(self):
        loaded = parse_scene(doc([obj("box")], {"box": {"parent": "ground", "relation": "on"}}))
        assert [o.id for o in loaded.objects] == ["box"]
        n = loaded.tree.parent["box"]
        assert n.kind is NodeKind.GROUND and n.relation is Relation.ON
        assert loaded.raw_layout.stage is Stage.RAW

    def test_cycle(self):
        d = doc([obj("a"), obj("b")], {"a": {"parent": "b"}, "b": {"parent": "a"}})
        with pytest.raises(SceneValidationError) as exc:
            parse_scene(d)
        assert exc.value.code == "cycle"

    def test_table_plant_groups(self, tmp_path):
        path = tmp_path / "table_plant.scene.json"
        path.write_text(json.dumps(fixtures.table_plant()))
        loaded = load_scene(path)
        groups = local_groups(loaded.tree)
        assert [(g.root_id, g.child_ids) for g in groups] == [("table", ("plant",))]

    @pytest.mark.parametrize("tree, code", [
        ({"a": {"parent": "ghost"}}, "dangling-parent"),
        ({}, "missing-parent"),
        ({"a": {"parent": "ground", "relation": "hanging"}}, "hanging-under-ground"),
        ({"a": {"parent": "ground", "relation": "leaning"}}, "invalid-relation"),
    ])
    def test_validation_codes(self, tree, code):
        with pytest.raises(SceneValidationError) as exc:
            parse_scene(doc([obj("a")], tree))
        assert exc.value.code == code

    def test_unknown_tree_entry(self):
        with pytest.raises(SceneValidationError) as exc:
            parse_scene(doc([obj("a")], {"a": {"parent": "ground"}, "b": {"parent": "ground"}}))
        assert exc.value.code == "unknown-object"

    def test_duplicate_id(self):
        with pytest.raises(SceneValidationError) as exc:
            parse_scene(doc([obj("a"), obj("a")], {"a": {"parent": "ground"}}))
        assert exc.value.code == "duplicate-id"

    @pytest.mark.parametrize("field, value, code", [
        ("scale", 0, "invalid-scale"),
        ("mass", -1.0, "invalid-mass"),
    ])
    def test_invalid_numbers(self, field, value, code):
        with pytest.raises(SceneValidationError) as exc:
            parse_scene(doc([obj("a", **{field: value})], {"a": {"parent": "ground"}}))
        assert exc.value.code == code
        assert exc.value.obj_id == "a"

    def test_non_unit_quaternion(self):
        d = doc([obj("a")], {"a": {"parent": "ground"}}, {"a": {"quat": [2, 0, 0, 0], "pos": [0, 0, 0]}})
        with pytest.raises(SceneValidationError):
            parse_scene(d)

    def test_mounted_under_wall_rooted_object(self):
        d = doc([obj("shelf"), obj("lamp")],
                {"shelf": {"parent": "wall", "relation": "attached"},
                 "lamp": {"parent": "shelf", "relation": "hanging"}})
        assert parse_scene(d).scene.wall_ids() == ["lamp", "shelf"]

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(SceneParseError):
            load_scene(p)

    def test_two_parents(self, tmp_path):
        p = tmp_path / "dup.json"
        p.write_text('{"objects": [{"id": "a", "box": [1, 1, 1]}],'
                     ' "tree": {"a": {"parent": "ground"}, "a": {"parent": "wall"}},'
                     ' "layout": {"a": {"quat": [1, 0, 0, 0], "pos": [0, 0, 0]}}}')
        with pytest.raises(SceneValidationError) as exc:
            load_scene(p)
        assert exc.value.code == "multiple-parents"

    def test_missing_mesh(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(doc([{"id": "a", "mesh": "nope.obj"}], {"a": {"parent": "ground"}})))
        with pytest.raises(MissingMeshError):
            load_scene(p)

    def test_obj_mesh_and_scale(self, tmp_path):
        (tmp_path / "meshes").mkdir()
        lines = [f"v {x} {y} {z}" for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        lines += ["vn 0 0 1", "vt 0 0", "f 1/1/1 2 3", "f 1 3 5", "# comment", "o name"]
        (tmp_path / "meshes" / "cube.obj").write_text("\n".join(lines))
        spec = doc([{"id": "a", "mesh": "meshes/cube.obj", "scale": 2.0}], {"a": {"parent": "ground"}})
        (tmp_path / "s.json").write_text(json.dumps(spec))
        loaded = load_scene(tmp_path / "s.json")
        assert loaded.scene["a"].volume == pytest.approx(8.0)
        verts, tris = read_obj(tmp_path / "meshes" / "cube.obj")
        assert verts.shape == (8, 3) and tris.tolist() == [[0, 1, 2], [0, 2, 4]]

    def test_inline_hulls(self):
        cube = [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        loaded = parse_scene(doc([{"id": "a", "hulls": [cube, [[p[0] + 2, p[1], p[2]] for p in cube]]}],
                                 {"a": {"parent": "ground"}}))
        assert len(loaded.scene["a"].hulls) == 2
        np.testing.assert_allclose(loaded.scene["a"].centroid, [1.5, 0.5, 0.5])

    @pytest.mark.parametrize("template", sorted(fixtures.TEMPLATES))
    def test_fixtures_validate(self, template):
        loaded = load_fixture(template, 3)
        assert set(loaded.raw_layout.ids) == set(loaded.scene.ids)


class TestGroups:
    def test_flat(self):
        tree = build_tree({"a": "ground", "b": "ground"})
        assert local_groups(tree) == []

    def test_chain(self):
        tree = build_tree({"table": "ground", "tray": "table", "cup": "tray"})
        groups = [(g.root_id, g.child_ids) for g in local_groups(tree)]
        assert groups == [("tray", ("cup",)), ("table", ("tray",))]

    def test_global_roots_examples(self):
        assert global_roots(build_tree({"table": "ground", "plant": "table"})) == ["table"]
        assert global_roots(build_tree({"radiator": "ground_wall", "poster": "wall"})) == ["radiator"]

    @settings(max_examples=200, deadline=None)
    @given(forests())
    def test_post_order(self, parents):
        tree = build_tree(parents)
        groups = local_groups(tree)
        position = {g.root_id: i for i, g in enumerate(groups)}

        def descendants(k):
            out = []
            for c, p in parents.items():
                if p == k:
                    out += [c] + descendants(c)
            return out

        for g in groups:
            for d in descendants(g.root_id):
                if d in position:
                    assert position[d] < position[g.root_id]

    @settings(max_examples=200, deadline=None)
    @given(forests())
    def test_partition(self, parents):
        tree = build_tree(parents)
        groups = local_groups(tree)
        with_kids = {p for p in parents.values() if p in parents}
        assert {g.root_id for g in groups} == with_kids
        children = [c for g in groups for c in g.child_ids]
        assert len(children) == len(set(children))
        assert set(children) == {k for k, p in parents.items() if p in parents}
        for g in groups:
            assert set(g.child_ids) == {k for k, p in parents.items() if p == g.root_id}

    @settings(max_examples=200, deadline=None)
    @given(forests())
    def test_global_roots_oracle(self, parents):
        tree = build_tree(parents)

        def root_of(k):
            while parents[k] in parents:
                k = parents[k]
            return parents[k]

        expected = {k for k, p in parents.items() if p in ("ground", "ground_wall")}
        expected |= {p for p in parents.values() if p in parents}
        expected = {k for k in expected if root_of(k) not in ("wall", "ceiling")}
        assert set(global_roots(tree)) == expected


layouts = st.dictionaries(
    st.text("abcdefgh_", min_size=1, max_size=6),
    st.tuples(st.integers(0, 2**31), st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3)),
    min_size=1, max_size=6,
)


class TestLayoutFiles:
    def test_identity_round_trip(self, tmp_path):
        lay = Layout({"a": Pose.identity()}, Stage.CANONICAL)
        save_layout(lay, tmp_path / "l.json")
        assert load_layout(tmp_path / "l.json") == lay

    def test_sign_flip_serializes_identically(self, tmp_path):
        q = random_quat(np.random.default_rng(0))
        save_layout(Layout({"a": Pose(q, [1, 2, 3])}), tmp_path / "p.json")
        save_layout(Layout({"a": Pose(-q, [1, 2, 3])}), tmp_path / "m.json")
        assert (tmp_path / "p.json").read_bytes() == (tmp_path / "m.json").read_bytes()

    def test_seventeen_digits(self, tmp_path):
        save_layout(Layout({"a": Pose([1, 0, 0, 0], [0.1, 1 / 3, 2.0])}), tmp_path / "l.json")
        text = (tmp_path / "l.json").read_text()
        assert "0.10000000000000001" in text and "0.33333333333333331" in text

    def test_thousand_random_round_trips(self, tmp_path):
        rng = np.random.default_rng(1)
        for i in range(1000):
            poses = {f"o{j}": Pose(random_quat(rng), rng.uniform(-10, 10, 3)) for j in range(int(rng.integers(1, 5)))}
            lay = Layout(poses, Stage(int(rng.integers(0, 3))))
            a, b = tmp_path / "a.json", tmp_path / "b.json"
            save_layout(lay, a)
            again = load_layout(a)
            save_layout(again, b)
            assert a.read_bytes() == b.read_bytes()
            assert again == lay.canonical()

    @settings(max_examples=100, deadline=None)
    @given(layouts)
    def test_round_trip_property(self, tmp_path_factory, entries):
        path = tmp_path_factory.mktemp("rt") / "l.json"
        poses = {}
        for k, (seed, pos) in entries.items():
            poses[k] = Pose(random_quat(np.random.default_rng(seed)), pos)
        lay = Layout(poses, Stage.OPTIMIZED)
        save_layout(lay, path)
        assert load_layout(path) == lay.canonical()
