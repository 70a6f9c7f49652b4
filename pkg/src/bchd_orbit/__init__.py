"""Periodic orbits of bang-bang controlled control-affine systems via BCHD series."""

__version__ = "0.1.0"
