"""Numerical toolkit for finite causal fermion systems."""

__version__ = "0.1.0"
