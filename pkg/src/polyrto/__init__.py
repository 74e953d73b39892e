"""Robust topology optimization under load uncertainty on polygonal meshes."""
__version__ = "0.1.0"
