# feedflow/__init__.py
"""Latent origin-destination flow estimation from station fill differences."""

__version__ = "0.1.0"
