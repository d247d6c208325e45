"""Nonlocality of bipartite quantum channels and of their decoherent actions."""

__version__ = "0.1.0"
