"""Desk-scale scene generators with injected layout defects.

Every template returns a scene-spec document (plain dict) that ``parse_scene``
accepts. Defects are deliberate: floating supports, objects sunk into their
support, overlapping neighbours and wall mounts that clip floor furniture.
"""

from __future__ import annotations

import numpy as np

from stablescene.errors import InvalidArgumentError
from stablescene.geom import box_points, cylinder
from stablescene.geom import rotation as rot

DENSITY = 200.0  # kg/m^3, used to derive masses from hull volumes
IDENTITY = [1.0, 0.0, 0.0, 0.0]


class _Builder:
    def __init__(self):
        self.objects: list[dict] = []
        self.tree: dict[str, dict] = {}
        self.layout: dict[str, dict] = {}

    def add(self, oid, hulls, parent, pos, quat=IDENTITY, relation="on", movable=True, name=None):
        hulls = [np.asarray(h, dtype=float) for h in hulls]
        vol = sum(_box_volume(h) for h in hulls)
        self.objects.append({
            "id": oid,
            "name": name or oid,
            "hulls": [h.tolist() for h in hulls],
            "mass": round(max(DENSITY * vol, 0.05), 6),
            "movable": movable,
        })
        self.tree[oid] = {"parent": parent, "relation": relation}
        self.layout[oid] = {"quat": [float(c) for c in quat], "pos": [float(c) for c in pos]}

    def doc(self) -> dict:
        return {"objects": self.objects, "tree": self.tree, "layout": self.layout}


def _box_volume(pts: np.ndarray) -> float:
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(np.prod(ext))


def _yaw(angle: float) -> list[float]:
    return rot.from_axis_angle([0.0, 1.0, 0.0], angle).tolist()


def _table(width, depth, height, top=0.05, leg=0.05):
    """Tabletop plus four legs; origin at the floor centre."""
    hulls = [box_points([width, top, depth], [0.0, height - top / 2, 0.0])]
    lx = width / 2 - leg / 2
    lz = depth / 2 - leg / 2
    for sx in (-1, 1):
        for sz in (-1, 1):
            hulls.append(box_points([leg, height - top, leg], [sx * lx, (height - top) / 2, sz * lz]))
    return hulls


def _plant(pot_r=0.1, pot_h=0.2, leaves=0.25):
    """Pot and foliage; origin at the bottom of the pot."""
    return [
        cylinder(pot_r, pot_h, 12, [0.0, pot_h / 2, 0.0]).vertices,
        box_points([leaves, leaves, leaves], [0.0, pot_h + leaves / 2, 0.0]),
    ]


def _chair(seat=0.45, seat_h=0.45, back_h=0.45, back_t=0.06):
    return [
        box_points([seat, seat_h, seat], [0.0, seat_h / 2, 0.0]),
        box_points([seat, back_h, back_t], [0.0, seat_h + back_h / 2, -seat / 2 + back_t / 2]),
    ]


def _tilt_all(b: _Builder, tilt_deg: float, rng: np.random.Generator):
    """Rotate the whole layout about the origin by ``tilt_deg`` around a random horizontal axis."""
    if tilt_deg == 0:
        return
    phi = rng.uniform(0, 2 * np.pi)
    q = rot.from_axis_angle([np.cos(phi), 0.0, np.sin(phi)], np.deg2rad(tilt_deg))
    r = rot.to_matrix(q)
    for entry in b.layout.values():
        entry["quat"] = rot.normalize(rot.multiply(q, entry["quat"])).tolist()
        entry["pos"] = (r @ np.asarray(entry["pos"])).tolist()


def stack(n: int = 3, seed: int = 0, gap: float = 0.02, jitter: float = 0.02, tilt: float = 0.0) -> dict:
    """Tower of ``n`` shrinking boxes, each floating ``gap`` above the one below."""
    if n < 1:
        raise InvalidArgumentError("stack needs at least one box")
    rng = np.random.default_rng(seed)
    b = _Builder()
    y = gap
    size = 0.5
    for i in range(n):
        oid = f"box{i}"
        off = [0.0, 0.0] if i == 0 else rng.uniform(-jitter, jitter, 2)
        b.add(oid, [box_points([size, size, size])], "ground" if i == 0 else f"box{i - 1}",
              [off[0], y + size / 2, off[1]])
        y += size + gap
        size *= 0.8
    _tilt_all(b, tilt, rng)
    return b.doc()


def table_plant(seed: int = 0, sink: float = 0.03, tilt: float = 0.0) -> dict:
    """Table on the floor with a potted plant sunk ``sink`` metres into the top."""
    rng = np.random.default_rng(seed)
    b = _Builder()
    b.add("table", _table(1.2, 0.7, 0.75), "ground", [0.0, 0.0, 0.0])
    px, pz = rng.uniform(-0.3, 0.3), rng.uniform(-0.15, 0.15)
    b.add("plant", _plant(), "table", [px, 0.75 - sink, pz], _yaw(rng.uniform(0, np.pi)))
    _tilt_all(b, tilt, rng)
    return b.doc()


def unstable_office(seed: int = 0, float_h: float = 0.05, sink: float = 0.03, overlap: float = 0.03,
                    tilt: float = 0.0) -> dict:
    """Nine-object office corner.

    Defects: desk floats ``float_h`` above the floor, plant sunk ``sink`` into
    the desk, two chairs overlap by ``overlap`` along X, poster clips the
    cabinet top. A ceiling lamp and a floor box are already consistent.
    """
    rng = np.random.default_rng(seed)
    j = lambda s=0.01: rng.uniform(-s, s)  # noqa: E731
    b = _Builder()
    b.add("desk", _table(1.4, 0.7, 0.75), "ground", [j(), float_h, 0.6 + j()])
    b.add("monitor", [box_points([0.2, 0.02, 0.15], [0.0, 0.01, 0.0]),
                      box_points([0.55, 0.35, 0.05], [0.0, 0.195, 0.0])],
          "desk", [0.1 + j(), 0.75 + float_h, 0.7 + j()], _yaw(j(0.1)))
    b.add("plant", _plant(0.08, 0.16, 0.2), "desk", [-0.5 + j(), 0.75 + float_h - sink, 0.55 + j()])
    seat = 0.45
    b.add("chair_a", _chair(seat), "ground", [-0.25 + j(), 0.0, -0.1 + j()], _yaw(np.pi + j(0.05)))
    b.add("chair_b", _chair(seat), "ground", [-0.25 + seat - overlap, 0.0, -0.1], _yaw(np.pi + j(0.05)))
    b.add("cabinet", [box_points([0.6, 1.0, 0.4], [0.0, 0.5, 0.0])], "ground_wall", [1.3 + j(), 0.0, 1.2])
    # the poster hangs on the back wall but its lower edge dips into the cabinet top
    b.add("poster", [box_points([0.5, 0.7, 0.02])], "wall", [1.3, 1.0 + 0.35 - 0.03, 1.38], relation="attached")
    b.add("lamp", [cylinder(0.15, 0.2, 12).vertices], "ceiling", [0.0, 2.5, 0.5], relation="hanging")
    b.add("crate", [box_points([0.4, 0.3, 0.4], [0.0, 0.15, 0.0])], "ground", [-1.2 + j(), 0.0, 0.9 + j()])
    _tilt_all(b, tilt, rng)
    return b.doc()


def wall_poster(seed: int = 0, overlap: float = 0.02, tilt: float = 0.0) -> dict:
    """Bookshelf against the back wall and a poster that clips into its back."""
    rng = np.random.default_rng(seed)
    b = _Builder()
    b.add("bookshelf", [box_points([0.8, 1.8, 0.3], [0.0, 0.9, 0.0])], "ground_wall", [0.0, 0.0, 1.0])
    b.add("poster", [box_points([0.5, 0.6, 0.02])], "wall",
          [rng.uniform(-0.2, 0.2), 1.2, 1.15 - overlap + 0.01], relation="attached")
    _tilt_all(b, tilt, rng)
    return b.doc()


def random_forest(objects: int = 20, seed: int = 0, tilt: float = 0.0) -> dict:
    """Random support forest: floor boxes on a grid with smaller boxes stacked on top."""
    if objects < 1:
        raise InvalidArgumentError("random_forest needs at least one object")
    rng = np.random.default_rng(seed)
    b = _Builder()
    n_roots = max(1, objects // 3)
    cols = int(np.ceil(np.sqrt(n_roots)))
    tops: dict[str, float] = {}
    sizes: dict[str, float] = {}
    for i in range(objects):
        oid = f"obj{i:02d}"
        if i < n_roots:
            size = rng.uniform(0.3, 0.6)
            x, z = (i % cols) * 1.0, (i // cols) * 1.0
            b.add(oid, [box_points([size, size, size])], "ground",
                  [x + rng.uniform(-0.05, 0.05), size / 2 + rng.uniform(0, 0.03), z + rng.uniform(-0.05, 0.05)],
                  _yaw(rng.uniform(0, np.pi / 2)))
            tops[oid] = size
        else:
            parent = f"obj{int(rng.integers(0, i)):02d}"
            psize = sizes.get(parent, 0.6)
            size = min(psize * rng.uniform(0.5, 0.8), 0.4)
            ppos = b.layout[parent]["pos"]
            top = ppos[1] + psize / 2
            b.add(oid, [box_points([size, size, size])], parent,
                  [ppos[0] + rng.uniform(-0.05, 0.05), top + size / 2 + rng.uniform(-0.01, 0.02),
                   ppos[2] + rng.uniform(-0.05, 0.05)])
        sizes[oid] = size if i >= n_roots else tops[oid]
    _tilt_all(b, tilt, rng)
    return b.doc()


TEMPLATES = {
    "stack": stack,
    "table_plant": table_plant,
    "unstable_office": unstable_office,
    "wall_poster": wall_poster,
    "random_forest": random_forest,
}


def generate(template: str, seed: int = 0, **params) -> dict:
    try:
        fn = TEMPLATES[template]
    except KeyError:
        raise InvalidArgumentError(f"unknown template {template!r}; choose from {sorted(TEMPLATES)}") from None
    return fn(seed=seed, **params)
