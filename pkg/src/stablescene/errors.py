"""Exception hierarchy shared across the package."""


class StableSceneError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(StableSceneError, ValueError):
    pass


class DegenerateGeometryError(StableSceneError, ValueError):
    pass


class PreconditionError(StableSceneError, ValueError):
    pass


class SceneParseError(StableSceneError):
    pass


class SceneValidationError(StableSceneError):
    """Scene file or tree violates an invariant.

    ``code`` is a stable machine-readable tag (``cycle``, ``multiple-parents``,
    ``dangling-parent``, ``hanging-under-ground``, ...), ``obj_id`` the offending
    object when one can be named.
    """

    def __init__(self, code: str, message: str, obj_id: str | None = None):
        self.code = code
        self.obj_id = obj_id
        prefix = f"[{code}]" if obj_id is None else f"[{code}] {obj_id!r}:"
        super().__init__(f"{prefix} {message}")


class MissingMeshError(StableSceneError):
    pass


class NoAnchorError(StableSceneError):
    pass


class SimulationDivergedError(StableSceneError):
    def __init__(self, step: int, obj_id: str):
        self.step = step
        self.obj_id = obj_id
        super().__init__(f"simulation diverged at step {step} (body {obj_id!r})")


class OptimizationFailedError(StableSceneError):
    def __init__(self, message: str, group: str | None = None):
        self.group = group
        super().__init__(message if group is None else f"{message} (group {group!r})")


class WallFitError(StableSceneError):
    pass


class StageError(StableSceneError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
