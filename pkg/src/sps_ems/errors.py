# src/sps_ems/errors.py

from __future__ import annotations

from typing import Any, List, Optional


class SpsEmsError(Exception):
    """Root of every error raised by the package."""


class ConfigError(SpsEmsError, ValueError):
    """
    Invalid configuration. `diagnostics` holds one line per offending field,
    formatted as `section.field: message`.
    """

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        super().__init__(message)
        self.message = message
        self.diagnostics = list(diagnostics or [])

    def __str__(self) -> str:
        if not self.diagnostics:
            return self.message
        return self.message + "\n" + "\n".join(f"  - {d}" for d in self.diagnostics)

    def __reduce__(self):
        return (type(self), (self.message, self.diagnostics))


class DomainError(SpsEmsError, ValueError):
    """An input lies outside the domain of the operation (or is not finite)."""


class NumericalDivergenceError(SpsEmsError, ArithmeticError):
    """The plant integration produced a non-finite or non-physical state."""

    def __init__(self, variable: str, value: float, t: float):
        super().__init__(f"plant state '{variable}' diverged to {value!r} at t={t:.6f}s")
        self.variable = variable
        self.value = value
        self.t = t

    def __reduce__(self):
        return (type(self), (self.variable, self.value, self.t))


class QpDimensionError(SpsEmsError, ValueError):
    """A QP could not be constructed from inconsistent data."""


class SimulationAbortedError(SpsEmsError, RuntimeError):
    """A run stopped early; `log` holds everything recorded up to the abort."""

    def __init__(self, message: str, log: Any = None):
        super().__init__(message)
        self.message = message
        self.log = log

    def __reduce__(self):
        return (type(self), (self.message, self.log))


class ComparisonError(SpsEmsError):
    """Runs handed to a comparison do not describe the same experiment."""


class ExportError(SpsEmsError):
    """A log is missing a series needed for an export."""
