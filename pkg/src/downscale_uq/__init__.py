"""Probabilistic statistical downscaling of gridded ensembles and spatial verification."""

__version__ = "0.1.0"
