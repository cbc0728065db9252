"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` used by the command-line front end:
2 for validation problems (schema, configuration, numeric domain), 3 for
optimizer non-convergence, 4 for design/identifiability problems.
"""

from __future__ import annotations


class VecurvesError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class SchemaError(VecurvesError):
    """A dataset row, file, or argument violates the documented schema."""

    exit_code = 2


class ConfigError(VecurvesError):
    """A configuration file or option set is invalid."""

    exit_code = 2


class NumericError(VecurvesError):
    """A computation left its numeric domain (underflow, division by zero)."""

    exit_code = 2


class ConvergenceError(VecurvesError):
    """An optimizer exhausted its iteration budget.

    ``result`` holds the best iterate found so the caller can inspect it.
    """

    exit_code = 3

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DesignError(VecurvesError):
    """The data cannot support the requested fit (empty stratum, no events,
    all responses censored, degenerate grid)."""

    exit_code = 4


class SeparationWarning(UserWarning):
    """A categorical-mix fit hit the coefficient cap (quasi-separation)."""
