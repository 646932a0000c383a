"""Desk-scale virtual fundamental class toolkit."""

from .errors import VFCError

__version__ = "0.1.0"

__all__ = ["VFCError", "__version__"]
