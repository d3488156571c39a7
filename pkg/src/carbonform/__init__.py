"""Causal estimation of built-environment effects on travel CO2 and
housing-allocation scenario planning."""

__version__ = "0.1.0"
