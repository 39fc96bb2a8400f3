"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ChaffmillError(Exception):
    """Base class for all package-specific errors."""


class PayloadError(ChaffmillError):
    """A record payload violates the wire constraints (e.g. embedded newline)."""


class ClfParseError(ChaffmillError):
    """A log line does not match the Combined Log Format grammar.

    Carries the byte offset of the failure and a reason naming the field.
    """

    def __init__(self, offset: int, reason: str):
        super().__init__(f"offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class FormatError(ChaffmillError):
    """A serialized stream/output/clean file violates its grammar.

    ``line`` is the 1-based line number of the offending line, 0 when the
    failure is file-level (e.g. truncation).
    """

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ConfigError(ChaffmillError):
    """A pipeline configuration is invalid; the message names the field."""
