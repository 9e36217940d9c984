from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from stablescene.errors import InvalidArgumentError
from stablescene.sim import _kernels as K


@dataclass(frozen=True)
class SimConfig:
    gravity: tuple[float, float, float] = (0.0, -9.8, 0.0)
    dt: float = 1.0 / 60.0
    substeps: int = 2
    steps: int = 60
    vel_probe: int = 15
    lin_damping: float = 0.3
    ang_damping: float = 0.3
    friction: float = 1.0
    restitution: float = 0.0
    contact_offset: float = 0.01
    max_depenetration_vel: float = 5.0
    solver_iterations: int = 6
    baumgarte: float = field(default=0.2)

    def __post_init__(self):
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        if len(self.gravity) != 3 or not all(np.isfinite(self.gravity)):
            raise InvalidArgumentError("gravity must be 3 finite numbers")
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise InvalidArgumentError(f"substeps must be >= 1, got {self.substeps}")
        if not 0 < self.vel_probe <= self.steps:
            raise InvalidArgumentError(f"need 0 < vel_probe <= steps, got {self.vel_probe} and {self.steps}")
        for name in ("lin_damping", "ang_damping"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1]")
        if not self.friction >= 0:
            raise InvalidArgumentError("friction must be non-negative")
        if not 0.0 <= self.restitution <= 1.0:
            raise InvalidArgumentError("restitution must lie in [0, 1]")
        if not self.contact_offset >= 0:
            raise InvalidArgumentError("contact_offset must be non-negative")
        if not self.max_depenetration_vel > 0:
            raise InvalidArgumentError("max_depenetration_vel must be positive")
        if self.solver_iterations < 1:
            raise InvalidArgumentError("solver_iterations must be >= 1")
        if not 0.0 < self.baumgarte <= 1.0:
            raise InvalidArgumentError("baumgarte must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown sim options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gravity"] = list(self.gravity)
        return d

    def kernel_params(self) -> tuple[np.ndarray, np.ndarray]:
        fp = np.zeros(11)
        fp[K.P_GX : K.P_GZ + 1] = self.gravity
        fp[K.P_DT] = self.dt
        fp[K.P_LIN_DAMP] = self.lin_damping
        fp[K.P_ANG_DAMP] = self.ang_damping
        fp[K.P_FRICTION] = self.friction
        fp[K.P_RESTITUTION] = self.restitution
        fp[K.P_OFFSET] = self.contact_offset
        fp[K.P_MAX_DEPEN] = self.max_depenetration_vel
        fp[K.P_BAUMGARTE] = self.baumgarte
        ip = np.zeros(4, dtype=np.int64)
        ip[K.I_SUBSTEPS] = self.substeps
        ip[K.I_STEPS] = self.steps
        ip[K.I_TAU] = self.vel_probe
        ip[K.I_ITERS] = self.solver_iterations
        return fp, ip
