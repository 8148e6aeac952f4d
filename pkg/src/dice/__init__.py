"""DICE: outcome-aware deep clustering under a significance constraint."""

__version__ = "0.1.0"
