"""Simulation and verification tools for the half-line NLS with a nonlinear Robin boundary source."""

__version__ = "0.1.0"
