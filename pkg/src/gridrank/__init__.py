"""gridrank: spatiotemporal learning-to-rank for gridded event forecasting.

The package forecasts and ranks the top-K riskiest grid locations per
period: a graph-convolutional/recurrent scorer over an adaptive location
graph, differentiable surrogate ranking objectives with a neighborhood-
local variant, importance-based location sampling with Gaussian spatial
filtering, and cross-K spatial evaluation against a randomness envelope.
"""

__version__ = "0.1.0"

from . import adjacency, autodiff, crossk, grid, losses, metrics, model, sampling, training
from .errors import ConfigError, DataError, NumericalError, ShapeError

__all__ = [
    "adjacency", "autodiff", "crossk", "grid", "losses", "metrics", "model",
    "sampling", "training", "ConfigError", "DataError", "NumericalError",
    "ShapeError", "__version__",
]
