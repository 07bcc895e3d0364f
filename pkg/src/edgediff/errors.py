"""Exception types. ``exit_code`` is what the command line returns for each category."""


class EdgeDiffError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(EdgeDiffError, ValueError):
    exit_code = 2
    category = "config"


class CheckpointError(EdgeDiffError):
    exit_code = 3
    category = "checkpoint"


class DataError(EdgeDiffError):
    exit_code = 4
    category = "data"


class InvalidScheduleError(EdgeDiffError, ValueError):
    """A transition variance went non-positive somewhere."""

    exit_code = 5
    category = "schedule"


class NumericalError(EdgeDiffError, RuntimeError):
    exit_code = 6
    category = "numerical"
