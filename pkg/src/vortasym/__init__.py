"""Numerical laboratory for rescaled 3D vorticity dynamics."""

__version__ = "0.1.0"
