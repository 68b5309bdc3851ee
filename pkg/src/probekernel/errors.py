"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class ProbeKernelError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(ProbeKernelError):
    """Table/column definition or lookup problem."""


class TypeMismatchError(ProbeKernelError):
    """A value does not fit the declared column type."""


class SqlError(ProbeKernelError):
    """SQL text could not be parsed or resolved against the catalog."""


class ProbeFormatError(ProbeKernelError):
    """A probe document violates the wire schema.

    Carries a stable machine-readable ``code`` so clients can branch on
    the exact violation rather than on message text.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class BranchError(ProbeKernelError):
    """Branch lifecycle violation (unknown id, inactive branch, bad op)."""


class MergeConflict(ProbeKernelError):
    """Raised when a merge aborts; lists every conflicting row key."""

    def __init__(self, conflicts: list[tuple[str, object]]):
        keys = ", ".join(f"{t}:{k!r}" for t, k in conflicts)
        super().__init__(f"merge aborted, conflicting writes: {keys}")
        self.conflicts = conflicts


class TerminationError(ProbeKernelError):
    """A termination criterion references something the result lacks."""


class ConfigError(ProbeKernelError):
    """Bad server configuration file or environment override."""
