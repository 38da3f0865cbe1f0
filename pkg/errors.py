from __future__ import annotations

from typing import Any


class RuinLabError(Exception):
    """Root of every error raised by ruin-lab operations."""

    exit_code = 1


class DomainError(RuinLabError, ValueError):
    """A parameter lies outside the admissible domain of an operation."""


class UnsupportedFamilyError(DomainError):
    """The operation needs an mgf or moment the step-law family does not have."""


class UndefinedMomentError(DomainError):
    pass


class ConfigError(DomainError):
    """Schema violation in a run config. `path` is the dotted field location."""

    def __init__(self, message: str, path: str = "", hint: str | None = None):
        self.path = path
        self.hint = hint
        text = f"{path}: {message}" if path else message
        if hint:
            text = f"{text} ({hint})"
        super().__init__(text)


class ConvergenceError(RuinLabError, ArithmeticError):
    """A numerical gate (quadrature, ODE residual, property check) refused a result."""

    exit_code = 2

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class ConditionFailure(ConvergenceError):
    """A convergence precondition on the return law does not hold. Carries the n-table."""

    def __init__(self, message: str, table: list[dict[str, Any]] | None = None, diagnostics: dict[str, Any] | None = None):
        self.table = list(table or [])
        super().__init__(message, diagnostics)
