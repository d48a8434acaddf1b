"""Fit, summarise, compare and draw Bayesian hierarchical linear models."""

__version__ = "0.1.0"
