"""The three-tier collection pipeline: agents, collector, stream serializer.

Agents (real or fake, distinguished only in consumer-side configuration)
format their log records to CLF bytes, tag each one, and attest the batch
with a per-epoch token. The collector interleaves all batches under a seeded
uniform shuffle, so batch boundaries never show in the record order, and the
stream serializer writes a byte-deterministic file for the compute provider.

Stream file grammar (UTF-8, LF line endings, tab-separated, no trailing
blank line):

    #CW1<TAB><epoch><TAB><record-count>
    A<TAB><agent_id><TAB><count><TAB><token-hex64>        one per agent,
                                                          sorted by agent_id
    R<TAB><agent_id><TAB><seq><TAB><mac-hex64><TAB><base64(payload)>

Loading never verifies MACs: the provider has no key, and keeping the loader
key-free keeps that trust boundary structural rather than procedural.
"""

from __future__ import annotations

import base64
import io
import random
from dataclasses import dataclass
from typing import BinaryIO, Literal, Sequence

from ._text import parse_decimal, b64_decode_canonical, read_lf_lines
from .errors import ConfigError, FormatError, PayloadError
from .tagging import (
    AgentToken,
    SecretKey,
    Tag,
    TaggedRecord,
    compute_agent_token,
    mac_from_hex,
    mac_hex,
    make_chaff_record,
    make_wheat_record,
    validate_agent_id,
    verify_record,
)
from .weblog import LogRecord, format_clf

STREAM_MAGIC = "#CW1"


@dataclass(frozen=True)
class AgentConfig:
    """One agent's identity, key, and consumer-side-only kind."""

    agent_id: str
    key: SecretKey
    kind: Literal["real", "fake"]
    content_seed: int

    def __post_init__(self) -> None:
        validate_agent_id(self.agent_id)
        if self.kind not in ("real", "fake"):
            raise ConfigError(f"agent {self.agent_id}: kind must be 'real' or 'fake'")


@dataclass(frozen=True)
class Batch:
    """An agent's signed emission unit: contiguous tagged records plus token."""

    agent_id: str
    epoch: int
    token: AgentToken
    records: tuple[TaggedRecord, ...]

    def __post_init__(self) -> None:
        validate_agent_id(self.agent_id)
        if self.token.agent_id != self.agent_id or self.token.epoch != self.epoch:
            raise ValueError("token does not attest this batch's agent/epoch")
        for r in self.records:
            if r.tag.agent_id != self.agent_id:
                raise ValueError("record tagged for a different agent")
        seqs = [r.tag.seq for r in self.records]
        if seqs and seqs != list(range(seqs[0], seqs[0] + len(seqs))):
            raise ValueError("record seqs must be strictly consecutive")


@dataclass(frozen=True)
class ManifestEntry:
    agent_id: str
    count: int
    token: bytes  # 32-byte attestation MAC


@dataclass(frozen=True)
class Stream:
    """The collector's interleaved union of all batches, ready to serialize."""

    epoch: int
    records: tuple[TaggedRecord, ...]
    manifest: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        ids = [m.agent_id for m in self.manifest]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError("manifest must be sorted by agent_id and duplicate-free")
        counts: dict[str, int] = {m.agent_id: 0 for m in self.manifest}
        for r in self.records:
            if r.tag.agent_id not in counts:
                raise ValueError(f"record from agent {r.tag.agent_id!r} missing from manifest")
            counts[r.tag.agent_id] += 1
        for m in self.manifest:
            if counts[m.agent_id] != m.count:
                raise ValueError(f"manifest count mismatch for agent {m.agent_id!r}")

    def tokens(self) -> dict[str, bytes]:
        return {m.agent_id: m.token for m in self.manifest}


def agent_emit(
    config: AgentConfig, records: Sequence[LogRecord], epoch: int, seq_start: int = 0
) -> Batch:
    """Format, tag, and attest one agent's records for one epoch.

    Agent-side data is trusted: any record that fails CLF formatting is a
    bug, so it aborts the whole batch rather than being skipped.
    """
    make = make_wheat_record if config.kind == "real" else make_chaff_record
    tagged = []
    for i, record in enumerate(records):
        try:
            payload = format_clf(record)
            tagged.append(make(config.key, config.agent_id, seq_start + i, payload))
        except (ValueError, PayloadError) as exc:
            raise PayloadError(
                f"agent {config.agent_id}: record {i} failed formatting: {exc}"
            ) from exc
    token = AgentToken(
        agent_id=config.agent_id,
        epoch=epoch,
        token=compute_agent_token(config.key, config.agent_id, epoch),
    )
    return Batch(agent_id=config.agent_id, epoch=epoch, token=token, records=tuple(tagged))


def collect(batches: Sequence[Batch], shuffle_seed: int) -> Stream:
    """Aggregate batches into one stream under a seeded uniform shuffle."""
    if not batches:
        raise ConfigError("collect requires at least one batch")
    epochs = {b.epoch for b in batches}
    if len(epochs) != 1:
        raise ConfigError(f"all batches must share one epoch, got {sorted(epochs)}")
    ids = [b.agent_id for b in batches]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ConfigError(f"duplicate agent ids across batches: {dupes}")

    records: list[TaggedRecord] = [r for b in batches for r in b.records]
    random.Random(shuffle_seed).shuffle(records)
    manifest = tuple(
        ManifestEntry(agent_id=b.agent_id, count=len(b.records), token=b.token.token)
        for b in sorted(batches, key=lambda b: b.agent_id)
    )
    return Stream(epoch=batches[0].epoch, records=tuple(records), manifest=manifest)


def dumps_stream(stream: Stream) -> bytes:
    lines = [f"{STREAM_MAGIC}\t{stream.epoch}\t{len(stream.records)}"]
    for m in stream.manifest:
        lines.append(f"A\t{m.agent_id}\t{m.count}\t{mac_hex(m.token)}")
    for r in stream.records:
        payload_b64 = base64.b64encode(r.payload).decode("ascii")
        lines.append(f"R\t{r.tag.agent_id}\t{r.tag.seq}\t{mac_hex(r.tag.mac)}\t{payload_b64}")
    return "\n".join(lines).encode("utf-8") + b"\n"


def serialize_stream(stream: Stream, sink: BinaryIO) -> None:
    """Write the byte-exact stream file; deterministic given the stream."""
    sink.write(dumps_stream(stream))


def _parse_mac(text: str, line_no: int, what: str) -> bytes:
    try:
        return mac_from_hex(text)
    except ValueError as exc:
        raise FormatError(line_no, f"{what}: {exc}") from exc


def _parse_payload_b64(text: str, line_no: int) -> bytes:
    payload = b64_decode_canonical(text, line_no, "payload")
    if b"\n" in payload or b"\r" in payload:
        raise FormatError(line_no, "payload contains newline bytes")
    return payload


def loads_stream(data: bytes) -> Stream:
    return deserialize_stream(io.BytesIO(data))


def deserialize_stream(source: BinaryIO) -> Stream:
    """Parse a stream file; inverse of :func:`serialize_stream` on its image.

    Purely syntactic: a record whose MAC was corrupted in transit loads fine
    here and only fails later, consumer-side, at verification.
    """
    lines = read_lf_lines(source)
    header = lines[0].split("\t")
    if len(header) != 3 or header[0] != STREAM_MAGIC:
        raise FormatError(1, f"bad magic: expected '{STREAM_MAGIC}\\t<epoch>\\t<count>'")
    epoch = parse_decimal(header[1], 1, "epoch")
    count = parse_decimal(header[2], 1, "record count")

    manifest: list[ManifestEntry] = []
    row = 1
    while row < len(lines) and lines[row].startswith("A\t"):
        fields = lines[row].split("\t")
        if len(fields) != 4:
            raise FormatError(row + 1, f"agent line must have 4 fields, got {len(fields)}")
        _, agent_id, count_text, token_hex = fields
        try:
            validate_agent_id(agent_id)
        except ValueError as exc:
            raise FormatError(row + 1, str(exc)) from exc
        manifest.append(
            ManifestEntry(
                agent_id=agent_id,
                count=parse_decimal(count_text, row + 1, "agent count"),
                token=_parse_mac(token_hex, row + 1, "agent token"),
            )
        )
        row += 1

    ids = [m.agent_id for m in manifest]
    if ids != sorted(ids) or len(set(ids)) != len(ids):
        raise FormatError(row, "agent lines must be sorted by agent_id and duplicate-free")
    if sum(m.count for m in manifest) != count:
        raise FormatError(row, f"agent counts must sum to the header count {count}")

    by_agent = {m.agent_id: m.count for m in manifest}
    seen: dict[str, int] = {m.agent_id: 0 for m in manifest}
    records: list[TaggedRecord] = []
    for offset in range(count):
        line_no = row + offset + 1
        if row + offset >= len(lines):
            raise FormatError(line_no, f"expected {count} record lines, found {offset}")
        fields = lines[row + offset].split("\t")
        if len(fields) != 5 or fields[0] != "R":
            raise FormatError(line_no, "record line must be 'R' with 5 tab-separated fields")
        _, agent_id, seq_text, mac_text, payload_b64 = fields
        if agent_id not in by_agent:
            raise FormatError(line_no, f"record from agent {agent_id!r} not in the manifest")
        seen[agent_id] += 1
        try:
            record = TaggedRecord(
                tag=Tag(
                    agent_id=agent_id,
                    seq=parse_decimal(seq_text, line_no, "seq"),
                    mac=_parse_mac(mac_text, line_no, "record mac"),
                ),
                payload=_parse_payload_b64(payload_b64, line_no),
            )
        except (ValueError, PayloadError) as exc:
            raise FormatError(line_no, str(exc)) from exc
        records.append(record)

    if row + count != len(lines):
        raise FormatError(row + count + 1, f"trailing lines after {count} records")
    for agent_id, actual in seen.items():
        if actual != by_agent[agent_id]:
            raise FormatError(
                0, f"agent {agent_id!r}: manifest count {by_agent[agent_id]}, found {actual}"
            )
    return Stream(epoch=epoch, records=tuple(records), manifest=tuple(manifest))


def chaff_ratio(stream: Stream, kinds: dict[str, str]) -> float:
    """Consumer-side bookkeeping: fake records divided by real records."""
    real = sum(m.count for m in stream.manifest if kinds.get(m.agent_id) == "real")
    fake = sum(m.count for m in stream.manifest if kinds.get(m.agent_id) == "fake")
    if real == 0:
        raise ConfigError("chaff ratio undefined without real records")
    return fake / real


def winnow_stream(key: SecretKey, stream: Stream) -> Stream:
    """Record-level winnowing: keep only records verifying under ``key``.

    The manifest is rebuilt from the survivors; agents whose records all
    fail verification drop out entirely. This is the per-record mode; the
    analyzer's result-level winnowing is the per-batch mode.
    """
    kept = [r for r in stream.records if verify_record(key, r)]
    counts: dict[str, int] = {}
    for r in kept:
        counts[r.tag.agent_id] = counts.get(r.tag.agent_id, 0) + 1
    manifest = tuple(
        ManifestEntry(agent_id=m.agent_id, count=counts[m.agent_id], token=m.token)
        for m in stream.manifest
        if m.agent_id in counts
    )
    return Stream(epoch=stream.epoch, records=tuple(kept), manifest=manifest)
