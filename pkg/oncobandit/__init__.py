"""Contextual-bandit benchmark for matching cancer cell lines to drugs."""

from .const import VERSION

__version__ = VERSION
