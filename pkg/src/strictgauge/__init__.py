"""Symbolic and lattice tools for gauging sigma models with small Dirac structures."""

__version__ = "0.1.0"
