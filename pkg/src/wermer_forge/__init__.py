"""Numerical toolkit for Wermer-type Fatou-Bieberbach maps."""

__version__ = "0.1.0"
