"""Keyed-MAC tagging, chaff construction, and record-level winnowing.

This is the cryptographic core of the scheme. Real agents tag every log
record with an HMAC-SHA256 under a shared secret key; fake agents produce
structurally identical records under their own keys. Without a key the two
populations are indistinguishable; with the shared key, winnowing recovers
exactly the real records.

Record MACs and per-agent attestation tokens are domain-separated: both are
HMAC-SHA256 over an injective encoding that starts with a distinct role
prefix (``CWREC`` / ``CWAGT``), so a value computed in one role can never
verify in the other.
"""

from __future__ import annotations

import random
import re
import secrets
from dataclasses import dataclass
from hashlib import sha256
from hmac import new as hmac_new
from typing import Iterable, Sequence

from .errors import PayloadError

MAC_LEN = 32

_RECORD_PREFIX = b"CWREC"
_TOKEN_PREFIX = b"CWAGT"
_SEP = b"\x00"

# Printable ASCII only (0x20-0x7e); control characters and tab are excluded
# by construction. 1-64 chars.
_AGENT_ID_RE = re.compile(r"^[\x20-\x7e]{1,64}$")

_U64_MAX = 2**64 - 1


def validate_agent_id(agent_id: str) -> str:
    """Check an agent id against the namespace rules and return it.

    Ids are opaque strings: nothing in the namespace distinguishes real
    from fake agents.
    """
    if not isinstance(agent_id, str) or not _AGENT_ID_RE.match(agent_id):
        raise ValueError(
            f"agent id must be 1-64 printable ASCII chars (no control chars): {agent_id!r}"
        )
    return agent_id


def _validate_u64(value: int, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= _U64_MAX:
        raise ValueError(f"{what} must be an unsigned 64-bit integer, got {value!r}")
    return value


def _validate_payload(payload: bytes) -> bytes:
    if not isinstance(payload, (bytes, bytearray)):
        raise PayloadError(f"payload must be bytes, got {type(payload).__name__}")
    if b"\n" in payload or b"\r" in payload:
        raise PayloadError("payload must not contain newline bytes (0x0a/0x0d)")
    return bytes(payload)


@dataclass(frozen=True)
class SecretKey:
    """A 256-bit MAC key. Never serialized into any CSP-visible artifact."""

    data: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.data, bytes) or len(self.data) != 32:
            raise ValueError("secret key must be exactly 32 bytes")

    def __repr__(self) -> str:  # keep key material out of logs and tracebacks
        return "SecretKey(<redacted>)"

    def hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_hex(cls, text: str) -> "SecretKey":
        text = text.strip()
        if len(text) != 64 or not re.fullmatch(r"[0-9a-fA-F]{64}", text):
            raise ValueError("key hex must be exactly 64 hex digits")
        return cls(bytes.fromhex(text))


def generate_key(seed: int | None = None) -> SecretKey:
    """Generate a key: cryptographically random, or deterministic from a seed.

    Seeded generation exists for reproducible test pipelines only.
    """
    if seed is None:
        return SecretKey(secrets.token_bytes(32))
    return SecretKey(random.Random(seed).randbytes(32))


@dataclass(frozen=True)
class Tag:
    """Per-record authentication data: origin agent, position, MAC."""

    agent_id: str
    seq: int
    mac: bytes

    def __post_init__(self) -> None:
        validate_agent_id(self.agent_id)
        _validate_u64(self.seq, "seq")
        if not isinstance(self.mac, bytes) or len(self.mac) != MAC_LEN:
            raise ValueError("mac must be exactly 32 bytes")


@dataclass(frozen=True)
class TaggedRecord:
    """One raw log line plus its tag: the wheat/chaff atom."""

    tag: Tag
    payload: bytes

    def __post_init__(self) -> None:
        object.__setattr__(self, "payload", _validate_payload(self.payload))


@dataclass(frozen=True)
class AgentToken:
    """Per-agent, per-epoch attestation for one emission unit."""

    agent_id: str
    epoch: int
    token: bytes

    def __post_init__(self) -> None:
        validate_agent_id(self.agent_id)
        _validate_u64(self.epoch, "epoch")
        if not isinstance(self.token, bytes) or len(self.token) != MAC_LEN:
            raise ValueError("token must be exactly 32 bytes")


def mac_hex(mac: bytes) -> str:
    """Canonical MAC encoding: lowercase hex, 64 chars."""
    return mac.hex()


def mac_from_hex(text: str) -> bytes:
    if len(text) != 64 or not re.fullmatch(r"[0-9a-f]{64}", text):
        raise ValueError("MAC hex must be exactly 64 lowercase hex digits")
    return bytes.fromhex(text)


def compute_record_mac(key: SecretKey, agent_id: str, seq: int, payload: bytes) -> bytes:
    """HMAC-SHA256 over the injective record encoding.

    The signed message is ``CWREC || 0x00 || agent_id || 0x00 || seq(8B BE)
    || 0x00 || payload``. The agent id cannot contain 0x00 (printable ASCII
    only) and seq has fixed width, so the encoding is injective and every
    field is bound by the MAC.
    """
    validate_agent_id(agent_id)
    _validate_u64(seq, "seq")
    payload = _validate_payload(payload)
    msg = b"".join(
        (
            _RECORD_PREFIX,
            _SEP,
            agent_id.encode("utf-8"),
            _SEP,
            seq.to_bytes(8, "big"),
            _SEP,
            payload,
        )
    )
    return hmac_new(key.data, msg, sha256).digest()


def compute_agent_token(key: SecretKey, agent_id: str, epoch: int) -> bytes:
    """HMAC-SHA256 over ``CWAGT || 0x00 || agent_id || 0x00 || epoch(8B BE)``."""
    validate_agent_id(agent_id)
    _validate_u64(epoch, "epoch")
    msg = b"".join((_TOKEN_PREFIX, _SEP, agent_id.encode("utf-8"), _SEP, epoch.to_bytes(8, "big")))
    return hmac_new(key.data, msg, sha256).digest()


def constant_time_equal(a: Sequence[int], b: Sequence[int]) -> bool:
    """Compare two byte sequences without early exit.

    Accumulates the XOR of every position so the code path touches all
    bytes regardless of where the first mismatch sits; the indistinguishable
    wheat/chaff story should not leak through comparison timing.
    """
    if len(a) != len(b):
        return False
    acc = 0
    for x, y in zip(a, b):
        acc |= x ^ y
    return acc == 0


def verify_record(key: SecretKey, record: TaggedRecord) -> bool:
    """True iff the record's MAC matches a recomputation under ``key``."""
    expected = compute_record_mac(key, record.tag.agent_id, record.tag.seq, record.payload)
    return constant_time_equal(expected, record.tag.mac)


def verify_agent_token(key: SecretKey, token: AgentToken) -> bool:
    """True iff the attestation token matches a recomputation under ``key``."""
    expected = compute_agent_token(key, token.agent_id, token.epoch)
    return constant_time_equal(expected, token.token)


def make_wheat_record(key: SecretKey, agent_id: str, seq: int, payload: bytes) -> TaggedRecord:
    """Tag a real record under the shared key."""
    mac = compute_record_mac(key, agent_id, seq, payload)
    return TaggedRecord(tag=Tag(agent_id=agent_id, seq=seq, mac=mac), payload=payload)


def make_chaff_record(fake_key: SecretKey, agent_id: str, seq: int, payload: bytes) -> TaggedRecord:
    """Tag a fake record under a fake key.

    Chaff is built by the exact construction wheat uses, just under a
    different key: to anyone without a key the two are byte-for-byte the
    same shape, while tests can still positively verify chaff under its own
    key. Keeping the fake key distinct from the shared key is the
    configuration layer's responsibility.
    """
    return make_wheat_record(fake_key, agent_id, seq, payload)


def winnow_records(key: SecretKey, records: Iterable[TaggedRecord]) -> list[TaggedRecord]:
    """Keep exactly the records that verify under ``key``, order preserved."""
    return [r for r in records if verify_record(key, r)]
