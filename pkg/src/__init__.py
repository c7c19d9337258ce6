"""Quantum Monte Carlo engine for Lennard-Jones clusters in D dimensions."""

__version__ = "1.0.0"
