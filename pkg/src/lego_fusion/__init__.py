"""Relationship-graph fusion with learnable graph-power operators."""

__version__ = "0.1.0"
