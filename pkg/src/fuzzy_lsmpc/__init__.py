"""Decentralized fuzzy model predictive control toolkit for delayed T-S large-scale systems."""

__version__ = "0.1.0"
