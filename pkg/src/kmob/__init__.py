"""Numerical verification engine for c-projective mobility of Kähler metrics."""

__version__ = "0.1.0"
