"""Mixed zero-sum stochastic differential games via doubly reflected BSDEs."""
from .model import GameModel, ModelError, SplitTerms, ValidationReport, validate_model
from .registry import build_model, builtin_model, builtin_names

__version__ = "0.1.0"

__all__ = [
    "GameModel", "ModelError", "SplitTerms", "ValidationReport", "validate_model",
    "build_model", "builtin_model", "builtin_names", "__version__",
]
