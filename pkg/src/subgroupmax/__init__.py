"""Bias-reduced estimates and sharp one-sided bounds for the best subgroup effect."""

__version__ = "0.1.0"
