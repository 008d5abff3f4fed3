class ConfigurationError(ValueError):
    """Invalid configuration, shapes, or file contents. CLI exit code 2."""


class PlanningError(RuntimeError):
    """A heuristic planner could not produce a feasible abstract trajectory."""


class UnsupportedOperationError(RuntimeError):
    pass
