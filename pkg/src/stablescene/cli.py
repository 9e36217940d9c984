"""Command-line entry point.

Settings are layered: built-in defaults, then a JSON ``--config`` file, then
``--section.key value`` flags (sections ``cem``, ``sim`` and ``energy``). The
effective settings are echoed to ``config.json`` in every output directory and
that file can be passed back through ``--config`` to repeat the run.

Exit codes: 0 success, 2 invalid input, 3 stage failure, 4 optimisation
failure, 5 simulation divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from stablescene import jsonfmt
from stablescene.errors import (
    DegenerateGeometryError,
    InvalidArgumentError,
    MissingMeshError,
    NoAnchorError,
    OptimizationFailedError,
    PreconditionError,
    SceneParseError,
    SceneValidationError,
    SimulationDivergedError,
    StageError,
    WallFitError,
)
from stablescene.opt import STAGES, CemConfig, EnergyWeights, PipelineConfig
from stablescene.sim import SimConfig

log = logging.getLogger("stablescene")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_STAGE = 3
EXIT_OPTIMIZATION = 4
EXIT_DIVERGED = 5

_SECTIONS = {"cem": CemConfig, "sim": SimConfig, "energy": EnergyWeights}
_ALIASES = {
    "energy": {f"lambda_{k}": k for k in ("stab", "vel", "pen", "layout", "pos")},
}
_INPUT_KEYS = ("scene", "layout", "gt", "gt_layout")
_EXTRA_KEYS = ("points", "no_align")


@dataclass(frozen=True)
class RunConfig:
    command: str
    scene: str | None = None
    layout: str | None = None
    gt: str | None = None
    gt_layout: str | None = None
    seed: int | None = None
    workers: int = 1
    stages: tuple[str, ...] = STAGES
    sim: SimConfig = SimConfig()
    cem: CemConfig = CemConfig()
    weights: EnergyWeights = EnergyWeights()
    verbosity: str = "WARNING"
    extra: dict = field(default_factory=dict)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.cem, self.weights, self.sim, self.workers, self.stages)

    def to_dict(self) -> dict:
        d = {
            "command": self.command,
            "seed": self.seed,
            "workers": self.workers,
            "stages": list(self.stages),
            "cem": self.cem.to_dict(),
            "sim": self.sim.to_dict(),
            "energy": self.weights.to_dict(),
        }
        for k in _INPUT_KEYS:
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        d.update(self.extra)
        return d


def _norm_key(section: str, key: str) -> str:
    key = key.replace("-", "_")
    return _ALIASES.get(section, {}).get(key, key)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if "," in text:
            try:
                return [float(t) for t in text.split(",")]
            except ValueError:
                pass
        return text


def _coerce(section: str, key: str, value):
    """Match a raw override value to the type of the field's default."""
    cls = _SECTIONS[section]
    known = {f.name: f for f in fields(cls)}
    if key not in known:
        raise InvalidArgumentError(f"unknown option {section}.{key}; known: {sorted(known)}")
    default = getattr(cls(), key)
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not float(value).is_integer():
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, tuple):
            vals = [float(v) for v in value]
            if len(vals) != len(default):
                raise TypeError
            return tuple(vals)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{section}.{key}: cannot use {value!r} here") from None
    return value


def split_overrides(tokens: list[str]) -> dict[str, dict]:
    """``--cem.samples 256 --energy.lambda-pen=0`` -> {"cem": {"samples": 256}, "energy": {"pen": 0}}."""
    out: dict[str, dict] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise InvalidArgumentError(f"unrecognised argument {tok!r}")
        name, eq, val = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(tokens):
                raise InvalidArgumentError(f"{tok} needs a value")
            val = tokens[i + 1]
            i += 1
        section, _, key = name.partition(".")
        if section not in _SECTIONS:
            raise InvalidArgumentError(f"unknown section in {tok!r}; use one of {sorted(_SECTIONS)}")
        out.setdefault(section, {})[_norm_key(section, key)] = _parse_value(val)
        i += 1
    return out


def _read_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise SceneParseError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SceneParseError(f"{path}: config must be a JSON object")
    return doc


def build_config(command: str, args: argparse.Namespace, overrides: dict[str, dict]) -> RunConfig:
    layered: dict = {"sections": {s: {} for s in _SECTIONS}}
    if getattr(args, "config", None):
        doc = _read_config_file(args.config)
        for key, val in doc.items():
            if key in _SECTIONS:
                if not isinstance(val, dict):
                    raise InvalidArgumentError(f"config section {key!r} must be an object")
                for k, v in val.items():
                    layered["sections"][key][_norm_key(key, k)] = v
            elif key in ("seed", "workers", "stages", *_INPUT_KEYS, *_EXTRA_KEYS):
                layered[key] = val
            elif key != "command":
                raise InvalidArgumentError(f"unknown config key {key!r}")
    for section, vals in overrides.items():
        layered["sections"][section].update(vals)
    for key in ("seed", "workers", "stages", *_INPUT_KEYS, *_EXTRA_KEYS):
        val = getattr(args, key, None)
        if val is not None:
            layered[key] = val

    seed = layered.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise InvalidArgumentError(f"seed must be a non-negative integer, got {seed!r}")
    cem_vals = {k: _coerce("cem", k, v) for k, v in layered["sections"]["cem"].items()}
    # the top-level seed wins over cem.seed
    if seed is None:
        seed = cem_vals.get("seed")
    cem_vals["seed"] = 0 if seed is None else seed
    stages = layered.get("stages", STAGES)
    if isinstance(stages, str):
        stages = tuple(s.strip() for s in stages.split(",") if s.strip())
    workers = layered.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise InvalidArgumentError(f"workers must be a positive integer, got {workers!r}")
    return RunConfig(
        command=command,
        scene=_as_str(layered.get("scene")),
        layout=_as_str(layered.get("layout")),
        gt=_as_str(layered.get("gt")),
        gt_layout=_as_str(layered.get("gt_layout")),
        seed=seed,
        workers=workers,
        stages=tuple(stages),
        sim=SimConfig(**{k: _coerce("sim", k, v) for k, v in layered["sections"]["sim"].items()}),
        cem=CemConfig(**cem_vals),
        weights=EnergyWeights(**{k: _coerce("energy", k, v) for k, v in layered["sections"]["energy"].items()}),
        verbosity=logging.getLevelName(log.getEffectiveLevel()),
        extra={k: layered[k] for k in _EXTRA_KEYS if k in layered},
    )


def _as_str(v):
    return None if v is None else str(v)


def _require(cfg: RunConfig, *keys):
    for k in keys:
        if getattr(cfg, k) is None:
            raise InvalidArgumentError(f"--{k.replace('_', '-')} is required")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(cfg: RunConfig):
    from stablescene.scene import load_layout, load_scene
    from stablescene.scene.io import check_layout_covers

    loaded = load_scene(cfg.scene)
    layout = loaded.raw_layout
    if cfg.layout is not None:
        layout = load_layout(cfg.layout)
        check_layout_covers(loaded.scene, layout)
    return loaded.scene, layout


# commands


def cmd_canonicalize(cfg: RunConfig, out: Path) -> str:
    from stablescene.canon import canonicalize
    from stablescene.errors import StableSceneError
    from stablescene.scene import save_layout

    _require(cfg, "scene")
    scene, raw = _load(cfg)
    try:
        cano, up = canonicalize(scene, raw)
    except (SceneValidationError, InvalidArgumentError):
        raise
    except StableSceneError as exc:
        raise StageError("canonicalize", exc) from exc
    out = _out_dir(out)
    save_layout(cano, out / "layout.json")
    jsonfmt.write(out / "up.json", {"direction": up.direction, "confidence": up.confidence})
    jsonfmt.write(out / "config.json", cfg.to_dict())
    return f"canonicalized {len(scene.ids)} objects; up confidence {up.confidence:.3f}"


def cmd_optimize(cfg: RunConfig, out: Path) -> str:
    from stablescene.opt import run_pipeline
    from stablescene.scene import save_layout

    _require(cfg, "scene")
    if cfg.seed is None:
        raise InvalidArgumentError("optimize needs --seed (there is no time-based default)")
    scene, raw = _load(cfg)
    res = run_pipeline(scene, raw, cfg.pipeline())
    out = _out_dir(out)
    save_layout(res.final, out / "layout.json")
    jsonfmt.write(out / "report.json", res.report)
    jsonfmt.write(out / "metrics.json", res.report["metrics"])
    jsonfmt.write(out / "config.json", cfg.to_dict())
    m = res.report["metrics"]
    return (
        f"energy {res.report['final_energy']['total']:.6g} | "
        f"collision {m['collision_rate']:.1f}% | stable {m['stable_rate']:.1f}%"
    )


def cmd_simulate(cfg: RunConfig, out: Path) -> str:
    from stablescene.eval import phys_metrics
    from stablescene.sim import Simulator, dump_trace

    _require(cfg, "scene")
    scene, layout = _load(cfg)
    sim = Simulator(scene, None, scene.immovable_ids(), cfg.sim)
    trace = sim.settle(layout, record=True)
    report = phys_metrics(scene, layout, trace)
    out = _out_dir(out)
    dump_trace(trace, trace.ids, out / "trace.ndjson")
    jsonfmt.write(out / "phys.json", report.to_dict())
    jsonfmt.write(out / "config.json", cfg.to_dict())
    return (
        f"collision {report.collision_rate:.1f}% | stable {report.stable_rate:.1f}% | "
        f"drift {report.pos_drift:.4f} m"
    )


def cmd_evaluate(cfg: RunConfig, out: Path) -> str:
    from stablescene.eval import biou, geometric_metrics, load_points, points_box, sample_scene
    from stablescene.scene import load_layout, load_scene

    _require(cfg, "scene", "gt")
    scene, layout = _load(cfg)
    n = cfg.extra.get("points", 100_000)
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise InvalidArgumentError(f"points must be a positive integer, got {n!r}")
    align = not cfg.extra.get("no_align", False)
    pred = sample_scene(scene, layout, n=n, seed=cfg.seed or 0)
    gt_path = Path(cfg.gt)
    if gt_path.suffix.lower() == ".json":
        if not gt_path.exists():
            raise SceneParseError(f"ground truth not found: {gt_path}")
        gt_loaded = load_scene(gt_path)
        gt_layout = gt_loaded.raw_layout if cfg.gt_layout is None else load_layout(cfg.gt_layout)
        gt = sample_scene(gt_loaded.scene, gt_layout, n=n, seed=(cfg.seed or 0) + 1)
        b = biou(scene, layout, gt_loaded.scene, gt_layout)
    else:
        gt = load_points(gt_path, n=n, seed=(cfg.seed or 0) + 1)
        b = points_box(pred).iou(points_box(gt))
    report = geometric_metrics(pred, gt, b, align=align)
    out = _out_dir(out)
    jsonfmt.write(out / "geo.json", report.to_dict())
    jsonfmt.write(out / "config.json", cfg.to_dict())
    return f"chamfer {report.chamfer:.6g} | fscore {report.fscore:.4f} | biou {report.biou:.4f}"


def cmd_gen_scene(template: str, params: dict, seed: int, out: Path) -> str:
    from stablescene.fixtures import generate
    from stablescene.scene import parse_scene

    try:
        doc = generate(template, seed=seed, **params)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad parameters for template {template!r}: {exc}") from None
    parse_scene(doc)
    out = Path(out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    jsonfmt.write(out, doc)
    return f"wrote {template} scene with {len(doc['objects'])} objects to {out}"


# argument handling


def _template_params(tokens: list[str]) -> dict:
    params = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise InvalidArgumentError(f"unexpected argument {tok!r}")
        name, eq, val = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(tokens):
                raise InvalidArgumentError(f"{tok} needs a value")
            val = tokens[i + 1]
            i += 1
        params[name.replace("-", "_")] = _parse_value(val)
        i += 1
    return params


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stablescene",
        description="Physically plausible layout optimisation for object-level scene reconstructions.",
        epilog="Per-parameter overrides: --cem.samples 256, --sim.steps 60, --energy.lambda-pen 0, ...",
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_help="random seed"):
        sp.add_argument("--scene", help="scene-spec JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help=seed_help)
        sp.add_argument("--workers", type=int, help="parallel rollout threads")
        sp.add_argument("--config", help="JSON config file (an echoed config.json works)")

    common(sub.add_parser("canonicalize", help="gravity-align and snap a raw layout"))
    sp = sub.add_parser("optimize", help="run the full optimisation pipeline")
    common(sp, "random seed (required)")
    sp.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    sp = sub.add_parser("simulate", help="settle a layout and report physical metrics")
    common(sp)
    sp.add_argument("--layout", help="layout JSON (default: the scene's own layout)")
    sp = sub.add_parser("evaluate", help="geometric metrics against ground truth")
    common(sp)
    sp.add_argument("--layout", help="predicted layout JSON (default: the scene's own layout)")
    sp.add_argument("--gt", help="ground truth: scene-spec JSON, OBJ mesh or XYZ points")
    sp.add_argument("--gt-layout", help="layout for a scene-spec ground truth")
    sp.add_argument("--points", type=int, help="surface samples per side (default 100000)")
    sp.add_argument("--no-align", action="store_true", default=None, help="skip ICP alignment")
    sp = sub.add_parser("gen-scene", help="write a fixture scene-spec")
    sp.add_argument("template", help="stack, table_plant, unstable_office, wall_poster or random_forest")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output scene file")
    return p


def _setup_logging(verbose: int):
    level = os.environ.get("STABLESCENE_LOG", "").upper() or "WARNING"
    if verbose:
        level = "DEBUG" if verbose > 1 else "INFO"
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(level)


def run(argv: list[str] | None = None) -> tuple[int, str]:
    """Parse and execute; returns (exit code, message)."""
    parser = _parser()
    args, rest = parser.parse_known_args(argv)
    _setup_logging(args.verbose)
    try:
        if args.command == "gen-scene":
            msg = cmd_gen_scene(args.template, _template_params(rest), args.seed, args.out)
            return EXIT_OK, msg
        cfg = build_config(args.command, args, split_overrides(rest))
        cmd = {
            "canonicalize": cmd_canonicalize,
            "optimize": cmd_optimize,
            "simulate": cmd_simulate,
            "evaluate": cmd_evaluate,
        }[args.command]
        return EXIT_OK, cmd(cfg, args.out)
    except (SceneParseError, SceneValidationError, InvalidArgumentError, MissingMeshError,
            DegenerateGeometryError, PreconditionError) as exc:
        return EXIT_INVALID, f"error: {exc}"
    except OptimizationFailedError as exc:
        return EXIT_OPTIMIZATION, f"optimization failed: {exc}"
    except SimulationDivergedError as exc:
        return EXIT_DIVERGED, f"simulation diverged: {exc}"
    except (StageError, NoAnchorError, WallFitError) as exc:
        return EXIT_STAGE, f"stage failed: {exc}"
    except OSError as exc:
        return EXIT_INVALID, f"error: {exc}"


def main(argv: list[str] | None = None) -> int:
    code, msg = run(argv)
    print(msg, file=sys.stdout if code == EXIT_OK else sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
