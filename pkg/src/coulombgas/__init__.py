"""Finite-N simulation and diagnostics for Coulomb interacting Brownian motions."""

__version__ = "0.1.0"
