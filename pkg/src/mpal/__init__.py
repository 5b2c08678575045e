"""Numerical toolkit for multi-particle Anderson localization at large disorder."""

__version__ = "0.1.0"
