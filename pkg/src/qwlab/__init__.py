"""Numerical laboratory for discrete-spacetime quantum models and equilibration bounds."""

__version__ = "0.1.0"
