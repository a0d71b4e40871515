"""Numerical laboratory for multi-parameter singular Radon transforms."""
__version__ = "0.1.0"
