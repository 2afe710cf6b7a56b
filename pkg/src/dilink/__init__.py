"""Dependency-aware incident linking: text + dependency-graph embeddings, Procrustes alignment, online suggestions."""

__version__ = "0.1.0"
