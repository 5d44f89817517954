"""Utility functions and configuration."""
from . import config
from . import data
from . import errors

__all__ = [
    'config',
    'data',
    'errors'
]
