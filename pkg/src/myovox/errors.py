"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input problems (2), solver failures (3),
structural/mesh violations (4).
"""


class MyovoxError(Exception):
    """Base class for all package errors."""


class ParseError(MyovoxError):
    """Malformed input file. Carries the offending path and line number."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class StructuralError(MyovoxError):
    """Mesh or tessellation violates a structural invariant."""


class SolverError(MyovoxError):
    """A linear solve failed (singular system, non-finite result)."""


class TraceError(MyovoxError):
    """A curve could not be traced through the mesh domain."""


class SketchError(MyovoxError):
    """A 2D stroke could not be projected (endpoints must hit bone)."""
