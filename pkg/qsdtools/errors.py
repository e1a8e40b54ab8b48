"""Error types for qsdtools.

Each error carries the process exit code the CLI maps it to.
"""
from __future__ import annotations


class QsdError(Exception):
    exit_code = 1


class ConfigError(QsdError, ValueError):
    """Bad or missing configuration value."""
    exit_code = 2


class ModelError(QsdError, ValueError):
    """Rate sequences that break the birth-and-death invariants."""
    exit_code = 2


class NumericalError(QsdError, ArithmeticError):
    """Overflow, non-convergence or a failed sign-change search."""
    exit_code = 3


class DiagnosticError(QsdError):
    """An acceptance diagnostic failed under --strict."""
    exit_code = 4
