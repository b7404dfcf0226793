"""Numerical toolkit for weakly regular hyperbolic boundary value problems."""

__version__ = "0.1.0"
