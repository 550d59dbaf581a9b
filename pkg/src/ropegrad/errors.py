"""Exception hierarchy shared by every ropegrad module."""


class RopeGradError(Exception):
    """Base class. ``stage`` is filled in by pipelines that know where they failed."""

    stage = None


class ShapeError(RopeGradError, ValueError):
    pass


class SizingError(RopeGradError, ValueError):
    """An output would exceed the materialization limits."""


class GuardError(SizingError):
    """An oracle-only routine was asked to materialize too much."""


class ConfigError(RopeGradError, ValueError):
    pass


class InstanceError(RopeGradError, ValueError):
    """A problem instance violates one of its invariants."""


class InstanceBoundError(InstanceError):
    """Entry bounds too large for exp to stay in double range."""


class ParameterError(RopeGradError, ValueError):
    pass


class ApproximationError(RopeGradError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class RankBudgetError(RopeGradError):
    pass


class UnsupportedFastPathError(RopeGradError):
    pass
