"""Unsupervised correspondence between organ-surface meshes with optional CT guidance."""

__version__ = "0.1.0"
