"""Sequence models for projecting next-season home run totals."""

__version__ = "0.1.0"
