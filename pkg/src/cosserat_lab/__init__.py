"""Numerical laboratory for the geometrically nonlinear Cosserat energy."""
__version__ = "0.1.0"
