"""Superadiabatic projector hierarchies and adiabatic band reduction."""
__version__ = "0.1.0"
