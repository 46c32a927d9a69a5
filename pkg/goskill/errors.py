"""Exception hierarchy shared by every goskill subsystem.

Each error carries the process exit code the CLI reports for it:
1 usage/config, 2 data, 3 numeric.
"""
from __future__ import annotations


class GoSkillError(Exception):
    """Base class for all goskill failures."""

    exit_code = 1


class ConfigError(GoSkillError):
    """Invalid configuration, unknown task, bad preset or missing checkpoint."""

    exit_code = 1


class RunLockedError(GoSkillError):
    """Another command owns the run directory."""

    exit_code = 1


class DataError(GoSkillError):
    """Missing or unusable training/evaluation data."""

    exit_code = 2


class DatasetFormatError(DataError):
    """Dataset or checkpoint has a wrong version or a corrupt header."""


class DatasetIOError(DataError):
    """Dataset file is truncated or could not be written."""


class NumericError(GoSkillError):
    """A NaN/Inf appeared in a forward value, a gradient or an action."""

    exit_code = 3


class ShapeError(GoSkillError, ValueError):
    """Operand dimensions do not conform."""

    exit_code = 3


class ContractError(GoSkillError):
    """A call violated a documented precondition."""

    exit_code = 3


class TargetIndexError(GoSkillError, IndexError):
    """Class target outside ``[0, C)``."""

    exit_code = 3


__all__ = [
    "GoSkillError",
    "ConfigError",
    "RunLockedError",
    "DataError",
    "DatasetFormatError",
    "DatasetIOError",
    "NumericError",
    "ShapeError",
    "ContractError",
    "TargetIndexError",
]
