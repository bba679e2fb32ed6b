"""Probabilistic Byzantine broadcast: protocols, simulation and security bounds."""

__version__ = "0.1.0"
