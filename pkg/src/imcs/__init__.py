"""Compressed sensing with pre-trained generators, marginal or measurement-conditional."""

__version__ = "0.1.0"
