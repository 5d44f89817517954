"""Dyad records, outcome derivation, centering and persistence."""

# Expose package-level exports
__all__ = []
