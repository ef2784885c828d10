# services/errors.py
"""
Exception hierarchy shared by every solver service.

Everything a service raises derives from `SolverError`, so command
handlers can catch one type and turn it into a failed result row.
"""

from typing import Optional


class SolverError(Exception):
    """Base class for errors raised by the solver services."""


class DomainError(SolverError, ValueError):
    """An argument lies outside the domain of the operation."""


class BracketError(SolverError):
    """A root bracket has no sign change or hits a non-finite value."""


class ConvergenceError(SolverError):
    """An iterative method ran out of budget and has nothing to report."""


class InfeasibleError(SolverError):
    """A linear or convex program has no feasible point."""


class UnboundedError(SolverError):
    """A linear program's objective is unbounded."""


class ConfigError(SolverError):
    """A run configuration could not be read or validated."""

    def __init__(self, message: str, key_path: Optional[str] = None,
                 line: Optional[int] = None):
        self.key_path = key_path
        self.line = line
        where = []
        if key_path:
            where.append(f"key '{key_path}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
