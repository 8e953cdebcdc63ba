"""Exception types raised across moso."""

from typing import Optional


class MosoError(Exception):
    """Base class for every error raised by moso."""


class ArgumentError(MosoError, ValueError):
    """An argument is out of range or inconsistent with its data."""


class ConfigurationError(MosoError, ValueError):
    """Settings that are individually valid but cannot be used together."""


class GuardError(MosoError):
    """A request refused by a cost or safety guard."""


class ParseError(MosoError, ValueError):
    """A malformed moso file.

    Args:
        message: What is wrong with the line.
        line: 1-based line number, or None when the problem is file-wide.
        path: File being parsed, if known.
    """

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = f"line {line}: " if line is not None else ""
        prefix = f"{path}: " if path else ""
        super().__init__(f"{prefix}{where}{message}")
