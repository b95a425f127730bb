"""Inverse problems for ODEs with unknown constants and unknown functions."""
__version__ = "0.1.0"
