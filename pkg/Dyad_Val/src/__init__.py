"""Dyadic experiment orchestration and dual validation."""

# Expose package-level exports
__all__ = []
