"""Toy-scale reference executor for the training wire contract."""

from __future__ import annotations

__version__ = "0.1.0"


class ToyTrainerError(Exception):
    """A failure the trainer can attribute to its inputs or its own run."""
