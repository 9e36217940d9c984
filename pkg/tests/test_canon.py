import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import axis_angle_quat, clearances, highest_y, load_fixture, lowest_y, quat_matrix, random_quat, up_error_deg
from stablescene import canon
from stablescene.errors import NoAnchorError
from stablescene.geom import Pose
from stablescene.scene import Layout, Stage, parse_scene

SNAP_GAP = 1e-4


def scene_doc(entries):
    """entries: id -> (box size, parent, quat, pos)."""
    return {
        "objects": [{"id": k, "box": list(v[0])} for k, v in entries.items()],
        "tree": {k: {"parent": v[1]} for k, v in entries.items()},
        "layout": {k: {"quat": list(v[2]), "pos": list(v[3])} for k, v in entries.items()},
    }


I = [1.0, 0.0, 0.0, 0.0]


class TestEstimateUp:
    def test_upright(self):
        loaded = load_fixture("unstable_office")
        up = canon.estimate_up(loaded.scene, loaded.raw_layout)
        np.testing.assert_allclose(up.direction, [0, 1, 0], atol=1e-12)
        assert up.confidence == 1.0

    def test_rotated_about_z(self):
        q = axis_angle_quat([0, 0, 1], np.radians(30))
        loaded = parse_scene(scene_doc({"a": ([1, 1, 1], "ground", q, [0, 0, 0]),
                                        "b": ([2, 1, 1], "ground", q, [3, 0, 0])}))
        up = canon.estimate_up(loaded.scene, loaded.raw_layout)
        np.testing.assert_allclose(up.direction, quat_matrix(q) @ [0, 1, 0], atol=1e-12)

    def test_volume_weighting(self):
        tilted = axis_angle_quat([1, 0, 0], np.pi / 2)
        loaded = parse_scene(scene_doc({"cabinet": ([2, 2, 2], "ground", I, [0, 1, 0]),
                                        "cup": ([0.1, 0.1, 0.1], "ground", tilted, [3, 0, 0])}))
        up = canon.estimate_up(loaded.scene, loaded.raw_layout)
        oracle = 8.0 * np.array([0, 1, 0]) + 0.001 * (quat_matrix(tilted) @ [0, 1, 0])
        oracle /= np.linalg.norm(oracle)
        np.testing.assert_allclose(up.direction, oracle, atol=1e-12)
        assert np.degrees(np.arccos(up.direction[1])) < 1.0
        assert up.confidence == 0.5

    def test_no_anchor(self):
        loaded = parse_scene({
            "objects": [{"id": "p", "box": [1, 1, 0.1]}],
            "tree": {"p": {"parent": "wall", "relation": "attached"}},
            "layout": {"p": {"quat": I, "pos": [0, 1, 0]}},
        })
        with pytest.raises(NoAnchorError):
            canon.estimate_up(loaded.scene, loaded.raw_layout)


class TestReorient:
    def test_identity(self):
        loaded = load_fixture("stack")
        up = canon.UpEstimate(np.array([0.0, 1.0, 0.0]), 1.0)
        out = canon.reorient_scene(loaded.raw_layout, up)
        assert out.stage is Stage.CANONICAL
        for k in loaded.scene.ids:
            assert out[k] == loaded.raw_layout[k]

    def test_x_to_y(self):
        lay = Layout({"a": Pose(I, [1.0, 2.0, 3.0])})
        out = canon.reorient_scene(lay, canon.UpEstimate(np.array([1.0, 0.0, 0.0]), 1.0))
        np.testing.assert_allclose(quat_matrix(out["a"].quat), quat_matrix(axis_angle_quat([0, 0, 1], np.pi / 2)),
                                   atol=1e-12)
        np.testing.assert_allclose(out["a"].pos, [-2.0, 1.0, 3.0], atol=1e-12)

    def test_antipodal(self):
        lay = Layout({"a": Pose(I, [0.0, 1.0, 0.0])})
        out = canon.reorient_scene(lay, canon.UpEstimate(np.array([0.0, -1.0, 0.0]), 1.0))
        np.testing.assert_allclose(out["a"].pos, [0.0, -1.0, 0.0], atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_rigid(self, seed):
        rng = np.random.default_rng(seed)
        poses = {f"o{i}": Pose(random_quat(rng), rng.uniform(-3, 3, 3)) for i in range(6)}
        lay = Layout(poses)
        v = rng.standard_normal(3)
        out = canon.reorient_scene(lay, canon.UpEstimate(v / np.linalg.norm(v), 1.0))
        ids = sorted(poses)
        for a in ids:
            for b in ids:
                d0 = np.linalg.norm(lay[a].pos - lay[b].pos)
                assert abs(np.linalg.norm(out[a].pos - out[b].pos) - d0) <= 1e-9
                rel0 = quat_matrix(lay[a].quat).T @ quat_matrix(lay[b].quat)
                rel1 = quat_matrix(out[a].quat).T @ quat_matrix(out[b].quat)
                np.testing.assert_allclose(rel1, rel0, atol=1e-9)


class TestSnap:
    def test_floating_box(self):
        loaded = parse_scene(scene_doc({"a": ([1, 1, 1], "ground", I, [0.3, 1.0, -0.2])}))
        out = canon.snap_supports(loaded.scene, loaded.raw_layout)
        assert 0.0 <= lowest_y(loaded.scene, out, "a") <= SNAP_GAP
        np.testing.assert_array_equal(out["a"].pos[[0, 2]], [0.3, -0.2])

    def test_sunk_plant(self):
        loaded = load_fixture("table_plant", 0, sink=0.1)
        out = canon.snap_supports(loaded.scene, loaded.raw_layout)
        top = highest_y(loaded.scene, out, "table")
        assert top == pytest.approx(0.75, abs=SNAP_GAP)
        assert 0.0 <= lowest_y(loaded.scene, out, "plant") - top <= SNAP_GAP

    def test_edge_child_uses_footprint(self):
        # a tall post at one end of a slab; the child sits at the other end
        doc = {
            "objects": [
                {"id": "slab", "hulls": [
                    [[x, y, z] for x in (-1, 1) for y in (0, 0.2) for z in (-0.5, 0.5)],
                    [[x, y, z] for x in (0.8, 1.0) for y in (0.2, 1.0) for z in (-0.1, 0.1)],
                ]},
                {"id": "cup", "box": [0.2, 0.2, 0.2]},
            ],
            "tree": {"slab": {"parent": "ground"}, "cup": {"parent": "slab"}},
            "layout": {"slab": {"quat": I, "pos": [0, 0, 0]}, "cup": {"quat": I, "pos": [-0.7, 0.5, 0]}},
        }
        loaded = parse_scene(doc)
        out = canon.snap_supports(loaded.scene, loaded.raw_layout)
        assert 0.2 <= lowest_y(loaded.scene, out, "cup") <= 0.2 + SNAP_GAP

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_stack_clearance(self, seed):
        rng = np.random.default_rng(seed)
        loaded = load_fixture("stack", seed, gap=0.0)
        poses = {k: Pose(p.quat, p.pos + [0.0, rng.uniform(-0.1, 0.1), 0.0]) for k, p in loaded.raw_layout.poses.items()}
        out = canon.snap_supports(loaded.scene, Layout(poses))
        for k, gap in clearances(loaded.scene, out).items():
            assert 0.0 <= gap <= SNAP_GAP, (k, gap)
        for k in loaded.scene.ids:
            np.testing.assert_array_equal(out[k].quat, poses[k].quat)
            np.testing.assert_array_equal(out[k].pos[[0, 2]], poses[k].pos[[0, 2]])

    def test_mounts_untouched(self):
        loaded = load_fixture("unstable_office")
        out = canon.snap_supports(loaded.scene, loaded.raw_layout)
        for k in ("poster", "lamp"):
            assert out[k] == loaded.raw_layout[k]


class TestCanonicalize:
    @pytest.mark.parametrize("template", ["stack", "table_plant", "unstable_office"])
    @pytest.mark.parametrize("tilt", [10.0, 25.0, 40.0])
    def test_tilt_corrected(self, template, tilt):
        loaded = load_fixture(template, 2, tilt=tilt)
        assert up_error_deg(loaded.scene, loaded.raw_layout) > tilt - 0.5
        out, _ = canon.canonicalize(loaded.scene, loaded.raw_layout)
        assert up_error_deg(loaded.scene, out) <= 1.0
        for gap in clearances(loaded.scene, out).values():
            assert 0.0 <= gap <= SNAP_GAP

    def test_idempotent(self):
        loaded = load_fixture("unstable_office", 1, tilt=20.0)
        once, _ = canon.canonicalize(loaded.scene, loaded.raw_layout)
        twice, _ = canon.canonicalize(loaded.scene, once)
        assert once.max_difference(twice) <= 1e-9
