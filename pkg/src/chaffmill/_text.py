"""Shared parsing helpers for the tab-separated file grammars."""

from __future__ import annotations

import base64
import binascii
from typing import BinaryIO

from .errors import FormatError

_U64_MAX = 2**64 - 1


def parse_decimal(text: str, line_no: int, what: str) -> int:
    if not text.isdigit() or (len(text) > 1 and text[0] == "0"):
        raise FormatError(line_no, f"{what} must be a canonical decimal, got {text!r}")
    value = int(text)
    if value > _U64_MAX:
        raise FormatError(line_no, f"{what} exceeds 64 bits")
    return value


def b64_decode_canonical(text: str, line_no: int, what: str) -> bytes:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise FormatError(line_no, f"{what} is not valid base64: {exc}") from exc
    if base64.b64encode(raw).decode("ascii") != text:
        raise FormatError(line_no, f"{what} base64 is not canonical")
    return raw


def read_lf_lines(source: BinaryIO) -> list[str]:
    """Read a whole LF-terminated UTF-8 file and split it into lines."""
    data = source.read()
    if not data.endswith(b"\n"):
        raise FormatError(0, "file must end with exactly one LF")
    try:
        return data[:-1].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(0, f"file is not valid UTF-8: {exc}") from exc
