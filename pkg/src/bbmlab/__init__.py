"""Simulation and verification toolkit for branching Brownian motion extremes."""

__version__ = "0.1.0"
