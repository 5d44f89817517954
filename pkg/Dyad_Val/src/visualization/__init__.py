"""SVG panels of the satisfaction distributions."""
from . import plots

__all__ = [
    'plots'
]
