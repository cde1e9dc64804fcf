"""Exception types shared across the meshing pipeline."""


class VoidhexError(Exception):
    """Base class for all pipeline errors."""


class ParseError(VoidhexError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(VoidhexError):
    """Input data violates a precondition (duplicates, overlaps, bad config)."""


class GeometryError(VoidhexError):
    """A geometric construction failed (degenerate cell, inverted element)."""


class TopologyError(VoidhexError):
    """Mesh connectivity is inconsistent (non-conformal face, orphan node)."""
