"""Calibration, simulation and diagnostics of propagator price-impact models."""
__version__ = "0.1.0"
