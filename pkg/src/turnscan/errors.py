"""Shared exception hierarchy.

Every failure the toolkit raises on purpose derives from TurnscanError so the
CLI can map error classes to exit codes; anything else escaping is a bug.
"""


class TurnscanError(Exception):
    """Base class for all toolkit errors."""


class IoError(TurnscanError):
    """Could not read or write a data product file."""
