"""Recurrent transformer reconstruction of under-sampled MRI on synthetic phantoms."""
from .errors import ConfigError, DomainError, FormatError, ReconError, ShapeError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DomainError", "FormatError", "ReconError", "ShapeError", "UsageError",
           "__version__"]
