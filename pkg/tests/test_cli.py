import json

import numpy as np
import pytest

from helpers import load_fixture, quat_matrix
from stablescene import cli, fixtures, jsonfmt
from stablescene.scene import load_layout, load_scene

SMALL = ["--cem.samples", "8", "--cem.iterations", "2", "--cem.episodes", "1"]


def write_fixture(path, template, seed=0, **params):
    jsonfmt.write(path, fixtures.generate(template, seed=seed, **params))
    return str(path)


def ok(argv):
    code, msg = cli.run([str(a) for a in argv])
    assert code == cli.EXIT_OK, msg
    return msg


def all_fixed_scene(path):
    doc = {
        "objects": [{"id": "a", "box": [0.4] * 3, "movable": False}, {"id": "b", "box": [0.2] * 3, "movable": False}],
        "tree": {"a": {"parent": "ground"}, "b": {"parent": "a"}},
        "layout": {"a": {"quat": [1, 0, 0, 0], "pos": [0, 0.2, 0]}, "b": {"quat": [1, 0, 0, 0], "pos": [0, 0.5, 0]}},
    }
    jsonfmt.write(path, doc)
    return str(path)


class TestGenScene:
    def test_deterministic(self, tmp_path):
        ok(["gen-scene", "unstable_office", "--seed", 7, "--out", tmp_path / "a.json"])
        ok(["gen-scene", "unstable_office", "--seed", 7, "--out", tmp_path / "b.json"])
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_template_params(self, tmp_path):
        ok(["gen-scene", "stack", "--n", 3, "--out", tmp_path / "s.json"])
        assert len(load_scene(tmp_path / "s.json").scene.ids) == 3
        ok(["gen-scene", "random_forest", "--objects=20", "--out", tmp_path / "f.json"])
        assert len(load_scene(tmp_path / "f.json").scene.ids) == 20

    def test_unknown_template(self, tmp_path):
        code, _ = cli.run(["gen-scene", "castle", "--out", str(tmp_path / "x.json")])
        assert code == cli.EXIT_INVALID

    def test_bad_param(self, tmp_path):
        code, _ = cli.run(["gen-scene", "stack", "--colour", "red", "--out", str(tmp_path / "x.json")])
        assert code == cli.EXIT_INVALID


class TestValidation:
    def test_malformed_scene(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        code, msg = cli.run(["simulate", "--scene", str(p), "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_INVALID and "error" in msg

    def test_missing_scene(self, tmp_path):
        code, _ = cli.run(["canonicalize", "--scene", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_INVALID

    def test_optimize_needs_seed(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "stack")
        code, msg = cli.run(["optimize", "--scene", scene, "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_INVALID and "seed" in msg
        assert not (tmp_path / "o").exists()

    @pytest.mark.parametrize("extra", [["--cem.samples", "0"], ["--cem.bogus", "1"], ["--stages", "local,polish"],
                                       ["--workers", "0"], ["--seed", "-1"]])
    def test_bad_overrides(self, tmp_path, extra):
        scene = write_fixture(tmp_path / "s.json", "stack")
        code, _ = cli.run(["optimize", "--scene", scene, "--out", str(tmp_path / "o"), "--seed", "0", *extra])
        assert code == cli.EXIT_INVALID

    def test_main_prints(self, tmp_path, capsys):
        assert cli.main(["gen-scene", "nope", "--out", str(tmp_path / "x.json")]) == cli.EXIT_INVALID
        assert "nope" in capsys.readouterr().err


class TestCanonicalize:
    def test_tilted_fixture_is_uprighted(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "table_plant", seed=2, tilt=30.0)
        ok(["canonicalize", "--scene", scene, "--out", tmp_path / "o"])
        layout = load_layout(tmp_path / "o" / "layout.json")
        y = quat_matrix(layout["table"].quat) @ [0.0, 1.0, 0.0]
        assert np.degrees(np.arccos(min(1.0, y[1]))) <= 1.0
        up = json.loads((tmp_path / "o" / "up.json").read_text())
        assert 0.0 <= up["confidence"] <= 1.0


class TestOptimize:
    def test_byte_identical(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "table_plant")
        before = (tmp_path / "s.json").read_bytes()
        for d in ("a", "b"):
            ok(["optimize", "--scene", scene, "--seed", 3, "--out", tmp_path / d, *SMALL])
        for name in ("layout.json", "report.json", "metrics.json", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "s.json").read_bytes() == before

    def test_config_round_trip(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "table_plant")
        ok(["optimize", "--scene", scene, "--seed", 3, "--out", tmp_path / "a", *SMALL, "--energy.lambda-pen", "2.5"])
        echoed = json.loads((tmp_path / "a" / "config.json").read_text())
        assert echoed["cem"]["samples"] == 8 and echoed["energy"]["pen"] == 2.5 and echoed["seed"] == 3
        ok(["optimize", "--config", tmp_path / "a" / "config.json", "--out", tmp_path / "b"])
        for name in ("layout.json", "report.json", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_flag_beats_config(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "stack")
        ok(["optimize", "--scene", scene, "--seed", 1, "--out", tmp_path / "a", *SMALL])
        ok(["optimize", "--config", tmp_path / "a" / "config.json", "--seed", 2, "--out", tmp_path / "b"])
        echoed = json.loads((tmp_path / "b" / "config.json").read_text())
        assert echoed["seed"] == 2 and echoed["cem"]["seed"] == 2

    def test_all_fixed_keeps_canonical(self, tmp_path):
        scene = all_fixed_scene(tmp_path / "s.json")
        ok(["optimize", "--scene", scene, "--seed", 0, "--out", tmp_path / "o", *SMALL])
        ok(["canonicalize", "--scene", scene, "--out", tmp_path / "c"])
        final = load_layout(tmp_path / "o" / "layout.json")
        cano = load_layout(tmp_path / "c" / "layout.json")
        assert final.max_difference(cano) == 0.0

    def test_stages_flag(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "wall_poster")
        ok(["optimize", "--scene", scene, "--seed", 0, "--stages", "wall", "--out", tmp_path / "o"])
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["config"]["stages"] == ["wall"] and report["optimization"] == []


class TestSimulate:
    def test_penetrating_fixture_reports_collision(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "unstable_office", overlap=0.08)
        msg = ok(["simulate", "--scene", scene, "--out", tmp_path / "o"])
        phys = json.loads((tmp_path / "o" / "phys.json").read_text())
        assert phys["collision_rate"] > 0.0 and "collision" in msg
        lines = (tmp_path / "o" / "trace.ndjson").read_text().splitlines()
        assert lines and all(json.loads(line) for line in lines)

    def test_layout_must_cover_scene(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "stack", n=3)
        other = write_fixture(tmp_path / "o.json", "table_plant")
        ok(["canonicalize", "--scene", other, "--out", tmp_path / "c"])
        code, _ = cli.run(["simulate", "--scene", scene, "--layout", str(tmp_path / "c" / "layout.json"),
                           "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_INVALID


class TestEvaluate:
    def test_identical(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "stack")
        ok(["evaluate", "--scene", scene, "--gt", scene, "--points", 3000, "--out", tmp_path / "o"])
        geo = json.loads((tmp_path / "o" / "geo.json").read_text())
        assert geo["chamfer"] < 1e-3 and geo["fscore"] > 0.99 and geo["biou"] == 1.0

    def test_shifted_ground_truth_is_aligned(self, tmp_path):
        loaded = load_fixture("stack")
        from stablescene.eval import sample_scene

        pts = sample_scene(loaded.scene, loaded.raw_layout, 4000, seed=9).points + [0.2, 0.0, 0.0]
        np.savetxt(tmp_path / "gt.xyz", pts)
        scene = write_fixture(tmp_path / "s.json", "stack")
        ok(["evaluate", "--scene", scene, "--gt", tmp_path / "gt.xyz", "--points", 4000, "--out", tmp_path / "a"])
        ok(["evaluate", "--scene", scene, "--gt", tmp_path / "gt.xyz", "--points", 4000, "--no-align",
            "--out", tmp_path / "b"])
        aligned = json.loads((tmp_path / "a" / "geo.json").read_text())
        raw = json.loads((tmp_path / "b" / "geo.json").read_text())
        assert aligned["chamfer"] < 1e-3 < raw["chamfer"]

    def test_unreadable_ground_truth(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "stack")
        code, _ = cli.run(["evaluate", "--scene", scene, "--gt", str(tmp_path / "missing.xyz"),
                           "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_INVALID

    def test_gt_required(self, tmp_path):
        scene = write_fixture(tmp_path / "s.json", "stack")
        code, msg = cli.run(["evaluate", "--scene", scene, "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_INVALID and "--gt" in msg
