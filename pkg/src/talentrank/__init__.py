"""Desk-scale talent/faceted search ranking toolkit."""

__version__ = "0.1.0"
