"""Span-based named entity extraction with Global Pointer scoring heads."""

__version__ = "0.1.0"
