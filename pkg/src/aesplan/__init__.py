"""Autonomous excavation planning and worksite simulation."""

__version__ = "0.1.0"
