"""Spectral convex-integration engine for Euler-Reynolds triples on the 3-torus."""

__version__ = "0.1.0"
