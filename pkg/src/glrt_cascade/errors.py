from __future__ import annotations


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""
