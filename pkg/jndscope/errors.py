"""Exception hierarchy shared across jndscope modules."""

from __future__ import annotations


class JndscopeError(Exception):
    """Base class for every domain failure the CLI reports with exit code 1."""


class ShapeMismatch(JndscopeError, ValueError):
    """Two inputs that must share a shape do not."""


class LengthMismatch(JndscopeError, ValueError):
    """Two sequences that must be aligned have different lengths."""


class EmptyInput(JndscopeError, ValueError):
    """An operation that needs at least one element received none."""
