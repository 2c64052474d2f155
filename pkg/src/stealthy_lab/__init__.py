"""Numerical laboratory for generalized stealthy processes."""

__version__ = "0.1.0"
