"""Unit quaternions (w, x, y, z) and rigid poses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stablescene.errors import InvalidArgumentError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
UNIT_TOL = 1e-6


def normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidArgumentError(f"cannot normalize quaternion {q}")
    return q / n


def canonical(q) -> np.ndarray:
    """Hemisphere-canonical form: w >= 0, first non-zero component positive when w == 0."""
    q = np.asarray(q, dtype=float).copy()
    for c in q:
        if c != 0.0:
            if c < 0.0:
                q = -q
            break
    q[q == 0.0] = 0.0  # drop negative zeros
    return q


def check_unit(q, name: str = "quaternion") -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise InvalidArgumentError(f"{name} must be 4 finite numbers, got {q}")
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise InvalidArgumentError(f"{name} is not unit length (norm {np.linalg.norm(q)})")
    return q


def multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotate(q, v) -> np.ndarray:
    return to_matrix(q) @ np.asarray(v, dtype=float)


def from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate([[np.cos(h)], np.sin(h) * axis])


def from_rotvec(rv) -> np.ndarray:
    """Exponential map of an axis-scaled rotation vector."""
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv)
    if theta < 1e-12:
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return q / np.linalg.norm(q)
    return from_axis_angle(rv / theta, theta)


def to_rotvec(q) -> np.ndarray:
    q = canonical(q)
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:]
    return 2.0 * np.arctan2(s, q[0]) * q[1:] / s


def from_two_vectors(src, dst) -> np.ndarray:
    """Minimal rotation carrying unit vector ``src`` onto unit vector ``dst``.

    Antiparallel inputs (within 1e-6) rotate by pi about X, or about Z when the
    vectors themselves lie along X.
    """
    a = np.asarray(src, dtype=float)
    b = np.asarray(dst, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-6:
        axis = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            axis = np.array([0.0, 0.0, 1.0])
        return from_axis_angle(axis, np.pi)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        return IDENTITY.copy()
    return from_axis_angle(axis / s, np.arctan2(s, c))


def geodesic_distance(a, b) -> float:
    """Angle in [0, pi] of the relative rotation, 2 arccos |<a, b>|."""
    a = check_unit(a, "first quaternion")
    b = check_unit(b, "second quaternion")
    d = abs(float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return 2.0 * float(np.arccos(min(1.0, d)))


def geodesic_distance_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise geodesic distance for (..., 4) arrays of unit quaternions."""
    d = np.abs(np.sum(a * b, axis=-1))
    return 2.0 * np.arccos(np.minimum(d, 1.0))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x_world = R(quat) x_body + pos."""

    quat: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        q = check_unit(self.quat, "pose rotation")
        p = np.asarray(self.pos, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise InvalidArgumentError(f"pose translation must be 3 finite numbers, got {p}")
        n = np.linalg.norm(q)
        # already-unit inputs keep their exact bits so serialization round-trips
        object.__setattr__(self, "quat", q.copy() if abs(n - 1.0) <= 1e-15 else q / n)
        object.__setattr__(self, "pos", p.copy())
        self.quat.flags.writeable = False
        self.pos.flags.writeable = False

    @classmethod
    def identity(cls) -> Pose:
        return cls(IDENTITY, np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        return to_matrix(self.quat)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + self.pos

    def compose(self, other: Pose) -> Pose:
        """self * other: apply ``other`` first."""
        return Pose(
            normalize(multiply(self.quat, other.quat)),
            self.pos + rotate(self.quat, other.pos),
        )

    def inverse(self) -> Pose:
        qi = conjugate(self.quat)
        return Pose(qi, -rotate(qi, self.pos))

    def canonical(self) -> Pose:
        return Pose(canonical(self.quat), self.pos)

    def as_array(self) -> np.ndarray:
        """7-vector (w, x, y, z, px, py, pz)."""
        return np.concatenate([self.quat, self.pos])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.quat, other.quat) and np.array_equal(self.pos, other.pos)

    def __repr__(self):
        return f"Pose(quat={self.quat.tolist()}, pos={self.pos.tolist()})"


def multiply_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product over the last axis of broadcastable (..., 4) arrays."""
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def from_rotvec_batch(rv: np.ndarray) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-12
    # sin(x/2)/x, with its series limit near zero
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    q = np.concatenate([np.cos(half), k * rv], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def rotate_batch(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by quaternions q (..., 4)."""
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def conjugate_batch(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])
