"""Desk-scale stacked acoustic-and-textual encoding for speech translation."""

__version__ = "0.1.0"
