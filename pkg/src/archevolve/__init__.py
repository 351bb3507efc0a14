"""Closed-loop evolutionary discovery engine for neural token-mixer architectures."""

__version__ = "0.1.0"
