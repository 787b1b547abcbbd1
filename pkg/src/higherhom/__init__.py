"""Spectral periodic homogenization for divergence-form elliptic operators of order 2m."""

__version__ = "0.1.0"
