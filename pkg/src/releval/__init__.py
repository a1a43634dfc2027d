"""Offline relevance-judgment and feature-launch evaluation harness for product search."""

__version__ = "0.1.0"
