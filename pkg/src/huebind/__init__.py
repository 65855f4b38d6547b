"""Training-free color binding mechanics and color evaluation metrics."""

__version__ = "0.1.0"
