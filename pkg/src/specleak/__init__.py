"""Speculative symbolic execution and cache residency checking for Spectre-v1 gadgets."""
__version__ = "0.1.0"
