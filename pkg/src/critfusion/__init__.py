"""Numerical lab for critical learning periods in multi-source networks."""

__version__ = "0.1.0"
