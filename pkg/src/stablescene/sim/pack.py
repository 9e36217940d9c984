"""Flatten scene geometry into contiguous arrays for the compiled simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stablescene.scene import Scene


@dataclass(frozen=True)
class PackedBodies:
    ids: tuple[str, ...]
    hv: np.ndarray  # (NV, 3) hull vertices, centre-of-mass frame
    h_vs: np.ndarray  # (NH + 1,) vertex offsets per hull
    h_body: np.ndarray  # (NH,) owning body
    h_fs: np.ndarray  # (NH + 1,) face offsets per hull
    f_n: np.ndarray  # (NF, 3) outward face normals
    f_vs: np.ndarray  # (NF + 1,) offsets into f_vi
    f_vi: np.ndarray  # global vertex indices of each face polygon
    com: np.ndarray  # (NB, 3) centre of mass in the object frame
    mass: np.ndarray
    inv_mass: np.ndarray
    inv_inertia: np.ndarray  # (NB, 3, 3) body frame
    dynamic: np.ndarray

    def kernel_args(self):
        return (
            self.hv, self.h_vs, self.h_body, self.h_fs, self.f_n, self.f_vs, self.f_vi,
            self.com, self.inv_mass, self.inv_inertia, self.dynamic,
        )

    def index(self, oid: str) -> int:
        return self.ids.index(oid)


def body_mass_properties(obj) -> tuple[np.ndarray, np.ndarray]:
    """Centre of mass and inertia tensor (about it) for uniform density over all hulls."""
    vols = np.array([h.volume for h in obj.hulls])
    com = (vols[:, None] * np.array([h.centroid for h in obj.hulls])).sum(axis=0) / vols.sum()
    density = obj.mass / vols.sum()
    inertia = np.zeros((3, 3))
    for h in obj.hulls:
        d = h.centroid - com
        inertia += density * (h.inertia + h.volume * (np.dot(d, d) * np.eye(3) - np.outer(d, d)))
    return com, inertia


def pack(scene: Scene, ids, fixed_ids) -> PackedBodies:
    ids = tuple(ids)
    fixed = set(fixed_ids)
    hv, h_vs, h_body, h_fs, f_n, f_vs, f_vi = [], [0], [], [0], [], [0], []
    com = np.zeros((len(ids), 3))
    mass = np.zeros(len(ids))
    inv_mass = np.zeros(len(ids))
    inv_inertia = np.zeros((len(ids), 3, 3))
    dynamic = np.zeros(len(ids), dtype=np.bool_)
    nv = 0
    for b, oid in enumerate(ids):
        obj = scene[oid]
        c, inertia = body_mass_properties(obj)
        com[b] = c
        mass[b] = obj.mass
        dynamic[b] = oid not in fixed
        if dynamic[b]:
            inv_mass[b] = 1.0 / obj.mass
            inv_inertia[b] = np.linalg.inv(inertia)
        for hull in obj.hulls:
            hv.append(hull.vertices - c)
            for poly, plane in zip(hull.polygons, hull.planes):
                f_n.append(plane[:3])
                f_vi.extend(int(i) + nv for i in poly)
                f_vs.append(len(f_vi))
            nv += len(hull.vertices)
            h_vs.append(nv)
            h_body.append(b)
            h_fs.append(len(f_n))
    return PackedBodies(
        ids=ids,
        hv=np.ascontiguousarray(np.concatenate(hv)),
        h_vs=np.array(h_vs, dtype=np.int64),
        h_body=np.array(h_body, dtype=np.int64),
        h_fs=np.array(h_fs, dtype=np.int64),
        f_n=np.ascontiguousarray(np.array(f_n, dtype=float)),
        f_vs=np.array(f_vs, dtype=np.int64),
        f_vi=np.array(f_vi, dtype=np.int64),
        com=com,
        mass=mass,
        inv_mass=inv_mass,
        inv_inertia=inv_inertia,
        dynamic=dynamic,
    )
