"""Vignette library, agent gateway, response parsing and dyad execution."""

# Expose package-level exports
__all__ = []
