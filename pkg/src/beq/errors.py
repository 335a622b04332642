"""Exception hierarchy shared by all modules.

Every error carries a short machine-readable ``code`` so the CLI can print a
single-line reason without parsing messages.
"""

from __future__ import annotations


class BeqError(Exception):
    code = "error"


class ConfigError(BeqError):
    code = "config"

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        prefix = ""
        if key is not None:
            prefix += f"{key}: "
        if line is not None:
            prefix = f"line {line}: " + prefix
        super().__init__(prefix + message)


class NumericalDomainError(BeqError):
    code = "numerical_domain"


class RootBracketError(BeqError):
    code = "root_bracket"


class DegenerateCurvatureError(BeqError):
    code = "degenerate_curvature"


class ExtrapolationError(BeqError):
    """A table was queried outside of the range it was built on."""

    code = "table_range"

    def __init__(self, message: str, value: float | None = None):
        self.value = value
        super().__init__(message)


TableRangeError = ExtrapolationError


class InternalConsistencyError(BeqError):
    code = "internal_inconsistency"


class SingularSigmaError(BeqError):
    code = "singular_sigma"

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"volatility matrix is singular at t={float(t)!r}")


class DegenerateMarketError(BeqError):
    code = "degenerate_market"


class ProjectionConvergenceError(BeqError):
    code = "projection_convergence"

    def __init__(self, message: str, best=None, gap: float | None = None):
        self.best = best
        self.gap = gap
        super().__init__(message)


class StepControlError(BeqError):
    code = "step_control"


class WellposednessError(BeqError):
    code = "wellposedness"
