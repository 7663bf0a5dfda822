"""Mediation analysis for high-dimensional mediators and sparse longitudinal outcomes."""
__version__ = "0.1.0"
