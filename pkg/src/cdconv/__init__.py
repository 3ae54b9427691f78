"""Contrastive Divergence for exponential families, with convergence diagnostics."""

__version__ = "0.1.0"
