"""Validation scoring and report generation."""

# Expose package-level exports
__all__ = []
