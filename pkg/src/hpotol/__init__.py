"""Cross-validation hyperparameter selection with explicit ERM tolerances."""

__version__ = "0.1.0"
