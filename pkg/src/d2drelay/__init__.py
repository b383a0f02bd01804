"""Socially aware multi-hop D2D content relay under a cellular base station."""

__version__ = "0.1.0"
