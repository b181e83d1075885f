"""Differentiable WDM fiber simulation and end-to-end 4D constellation shaping."""

__version__ = "0.1.0"
