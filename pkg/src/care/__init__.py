"""Class-aware representation refinement for graph classification, built on numpy."""

from .errors import CareError, ConfigError, ContractError, DomainError, FormatError, NumericalError, ShapeError

__version__ = "0.1.0"

__all__ = [
    "CareError",
    "ConfigError",
    "ContractError",
    "DomainError",
    "FormatError",
    "NumericalError",
    "ShapeError",
]
