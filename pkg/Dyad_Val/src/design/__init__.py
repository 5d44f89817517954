"""Factorial design and replication planning."""
from . import experiment_design

__all__ = [
    'experiment_design'
]
