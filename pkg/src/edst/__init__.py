"""Enriched dialog state tracking: belief algebra, neural tracker,
training, evaluation, and a template baseline."""

__version__ = "0.1.0"
