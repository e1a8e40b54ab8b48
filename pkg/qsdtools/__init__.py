"""Quasi-stationary distributions of absorbed birth-and-death chains and their
Fleming-Viot particle approximations."""
__version__ = "1.0.0"

from .errors import ConfigError, DiagnosticError, ModelError, NumericalError, QsdError  # noqa: E402
from .measures import EmpiricalMeasure, tv_distance  # noqa: E402
from .model import BirthDeathModel, named_model, table_model  # noqa: E402

__all__ = ["__version__", "BirthDeathModel", "named_model", "table_model", "EmpiricalMeasure",
           "tv_distance", "QsdError", "ConfigError", "ModelError", "NumericalError", "DiagnosticError"]
