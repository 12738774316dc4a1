"""Exception hierarchy.

Each error carries the process exit code the CLI maps it to:
1 for IO/usage, 2 for degenerate input, 3 for empty results and
4 for convergence failures.
"""


class SvmShapeError(Exception):
    exit_code = 1


class InvalidSpec(SvmShapeError, ValueError):
    pass


class SamplingStalled(SvmShapeError):
    exit_code = 3


class DegenerateInput(SvmShapeError):
    exit_code = 2


class SingleClass(DegenerateInput):
    """All training labels are equal, so the dual problem is meaningless."""


class TooLarge(SvmShapeError, ValueError):
    pass


class NoConvergence(SvmShapeError):
    exit_code = 4


class DegenerateActiveSet(DegenerateInput):
    """No multiplier is strictly inside its box; the bias gradient is undefined."""


class SingularKkt(DegenerateInput):
    pass


class UnstableActiveSet(DegenerateInput):
    pass


class ShapeMismatch(SvmShapeError, ValueError):
    pass


class TaskSkipped(DegenerateInput):
    def __init__(self, cause):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause


class AllTasksSkipped(DegenerateInput):
    pass


class EmptySurface(SvmShapeError):
    exit_code = 3


class EmptyMesh(SvmShapeError):
    exit_code = 3


class UndefinedIoU(SvmShapeError):
    exit_code = 3
