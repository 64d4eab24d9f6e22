"""Desk-scale laboratory for masked-image-consistency domain adaptation."""

__version__ = "0.1.0"
