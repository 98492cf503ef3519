"""Adiabatic charge pumping on tight-binding leads."""

__version__ = "0.1.0"
