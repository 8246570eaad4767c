"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "MovingSetsError",
    "MeshMismatchError",
    "PreconditionError",
    "ConvergenceError",
    "SolverError",
    "ConfigError",
]


class MovingSetsError(Exception):
    """Base class for errors raised by this package."""


class MeshMismatchError(MovingSetsError, ValueError):
    """Operands are attached to different meshes."""


class PreconditionError(MovingSetsError, ValueError):
    """A mathematical hypothesis required by a construction is violated.

    The message names the violated hypothesis so study logs stay readable.
    """


class ConvergenceError(MovingSetsError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float | None = None,
                 iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SolverError(MovingSetsError, RuntimeError):
    """A direct solve failed or produced an unacceptable residual."""


class ConfigError(MovingSetsError, ValueError):
    """A study configuration failed validation.

    ``messages`` holds one human-readable string per offending field.
    """

    def __init__(self, messages: list[str] | str):
        if isinstance(messages, str):
            messages = [messages]
        super().__init__("; ".join(messages))
        self.messages = list(messages)
