"""Gumbel-based categorical gradient estimators and bimodal fusion architecture search."""

__version__ = "0.1.0"

from .kernels import active_backend

__all__ = ["active_backend", "__version__"]
