"""Unsupervised short-ticketing detection for railway tap data."""

__version__ = "0.1.0"
