"""Key-free map/shuffle/reduce engine with the built-in log-analytics jobs.

This module is the untrusted-provider side of the pipeline. By construction
it accepts no key material anywhere in its interface: it parses every record
it is given, real or fake, and cannot tell the difference. What it *must* do
is preserve provenance: every intermediate pair is grouped under
``(agent_id, logical_key)`` and every output row echoes the agent's
attestation token from the stream manifest, so the consumer can later winnow
aggregates without real and fake values ever having been merged.

Output file grammar (UTF-8, LF, tabs, no trailing blank line):

    #CWO1<TAB><job-name><TAB><epoch><TAB><row-count>
    E<TAB><agent_id><TAB><parse-error-count>      one per manifest agent, sorted
    O<TAB><agent_id><TAB><token-hex64><TAB><logical_key-base64><TAB><value>

Rows are sorted bytewise by (agent_id, logical_key); ``run_job`` output is
bit-identical for any worker count.
"""

from __future__ import annotations

import base64
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Sequence

from ._text import b64_decode_canonical, parse_decimal, read_lf_lines
from .errors import ClfParseError, FormatError
from .pipeline import Stream
from .tagging import TaggedRecord, mac_from_hex, mac_hex, validate_agent_id
from .weblog import LogRecord, parse_clf

OUTPUT_MAGIC = "#CWO1"

JOB_NAMES = ("page_hits", "session_stats", "trending_terms")


@dataclass(frozen=True)
class JobSpec:
    """A registered job plus its parameters.

    ``session_gap`` is read by session_stats, ``top_k`` by trending_terms;
    the others ignore them.
    """

    name: str
    session_gap: int = 1800
    top_k: int = 10

    def __post_init__(self) -> None:
        if self.name not in JOB_NAMES:
            raise ValueError(f"unknown job {self.name!r}; registered: {JOB_NAMES}")
        if self.session_gap <= 0:
            raise ValueError("session_gap must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class OutputRow:
    agent_id: str
    token: bytes
    logical_key: str
    value: str


@dataclass(frozen=True)
class JobOutput:
    """The provider-side result table plus per-agent parse-error counts."""

    job: JobSpec
    epoch: int
    rows: tuple[OutputRow, ...]
    parse_errors: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        keys = [(r.agent_id, r.logical_key) for r in self.rows]
        if keys != sorted(keys):
            raise ValueError("rows must be sorted by (agent_id, logical_key)")


class MalformedQuery(ValueError):
    """A /search query whose percent-encoding cannot be decoded."""


_HEX_DIGITS = frozenset(b"0123456789abcdefABCDEF")


def _percent_decode_strict(text: str) -> str:
    """Percent-decode, rejecting bad escapes and invalid UTF-8 outright.

    urllib's unquote silently passes malformed escapes through; the skip-and-
    count policy needs malformed input to be *detected*, not papered over.
    '+' decodes to space, the query-string convention.
    """
    out = bytearray()
    raw = text.encode("utf-8")
    i = 0
    while i < len(raw):
        b = raw[i]
        if b == 0x25:  # '%'
            pair = raw[i + 1 : i + 3]
            if len(pair) != 2 or pair[0] not in _HEX_DIGITS or pair[1] not in _HEX_DIGITS:
                raise MalformedQuery(f"bad percent escape in {text!r}")
            out.append(int(pair, 16))
            i += 3
        elif b == 0x2B:  # '+'
            out.append(0x20)
            i += 1
        else:
            out.append(b)
            i += 1
    try:
        return out.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedQuery(f"percent-decoded bytes are not UTF-8 in {text!r}") from None


def _first_query_param(query: str, key: str) -> str | None:
    for part in query.split("&"):
        name, sep, value = part.partition("=")
        if sep and name == key:
            return value
    return None


def _map_page_hits(record: LogRecord, spec: JobSpec) -> list[tuple[str, object]]:
    return [(record.path, 1)]


def _reduce_page_hits(values: list, spec: JobSpec) -> str:
    return str(sum(values))


def _map_session_stats(record: LogRecord, spec: JobSpec) -> list[tuple[str, object]]:
    return [(record.client_ip, (record.timestamp, 1))]


def sessionize(timestamps: Sequence[int], gap: int) -> tuple[int, int, int]:
    """Split sorted timestamps at gaps >= ``gap``.

    Returns (sessions, total_duration, requests); a single-request session
    contributes 0 duration.
    """
    ts = sorted(timestamps)
    if not ts:
        return 0, 0, 0
    sessions = 1
    duration = 0
    start = prev = ts[0]
    for t in ts[1:]:
        if t - prev >= gap:
            duration += prev - start
            sessions += 1
            start = t
        prev = t
    duration += prev - start
    return sessions, duration, len(ts)


def _reduce_session_stats(values: list, spec: JobSpec) -> str:
    sessions, duration, requests = sessionize([t for t, _ in values], spec.session_gap)
    return f"sessions={sessions};total_duration={duration};requests={requests}"


def _map_trending_terms(record: LogRecord, spec: JobSpec) -> list[tuple[str, object]]:
    if record.path != "/search":
        return []
    raw = _first_query_param(record.query, "q")
    if raw is None:
        return []
    return [(_percent_decode_strict(raw).lower(), 1)]


def _reduce_trending_terms(values: list, spec: JobSpec) -> str:
    return str(sum(values))


def _finalize_top_k(agent_rows: list[tuple[str, str]], spec: JobSpec) -> list[tuple[str, str]]:
    ranked = sorted(agent_rows, key=lambda kv: (-int(kv[1]), kv[0]))
    return ranked[: spec.top_k]


def _finalize_identity(agent_rows: list[tuple[str, str]], spec: JobSpec) -> list[tuple[str, str]]:
    return agent_rows


@dataclass(frozen=True)
class _JobDef:
    map_record: Callable[[LogRecord, JobSpec], list[tuple[str, object]]]
    reduce_values: Callable[[list, JobSpec], str]
    finalize_agent: Callable[[list[tuple[str, str]], JobSpec], list[tuple[str, str]]]


_REGISTRY: dict[str, _JobDef] = {
    "page_hits": _JobDef(_map_page_hits, _reduce_page_hits, _finalize_identity),
    "session_stats": _JobDef(_map_session_stats, _reduce_session_stats, _finalize_identity),
    "trending_terms": _JobDef(_map_trending_terms, _reduce_trending_terms, _finalize_top_k),
}

# shard work unit: (group_key -> [(seq, stream_index, value)]), per-agent error counts
_ShardResult = tuple[dict[tuple[str, str], list[tuple[int, int, object]]], dict[str, int]]


def _map_shard(
    shard: Sequence[tuple[int, TaggedRecord]], jobdef: _JobDef, spec: JobSpec
) -> _ShardResult:
    groups: dict[tuple[str, str], list[tuple[int, int, object]]] = {}
    errors: dict[str, int] = {}
    for index, record in shard:
        agent_id = record.tag.agent_id
        try:
            parsed = parse_clf(record.payload)
            pairs = jobdef.map_record(parsed, spec)
        except (ClfParseError, MalformedQuery):
            errors[agent_id] = errors.get(agent_id, 0) + 1
            continue
        for logical_key, value in pairs:
            groups.setdefault((agent_id, logical_key), []).append(
                (record.tag.seq, index, value)
            )
    return groups, errors


def run_job(job: JobSpec, stream: Stream, workers: int = 1) -> JobOutput:
    """Run one analytics job over a stream; output is invariant in ``workers``.

    Malformed records are skipped and counted per agent, never fatal: one
    corrupt line must not cost the whole epoch. Values reaching a reducer are
    sorted by originating (seq, stream position), so even non-commutative
    reducers stay deterministic under any parallel schedule.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    jobdef = _REGISTRY[job.name]
    tokens = stream.tokens()

    indexed = list(enumerate(stream.records))
    if workers == 1 or len(indexed) < 2:
        shard_results = [_map_shard(indexed, jobdef, job)]
    else:
        step = max(1, -(-len(indexed) // (workers * 4)))
        shards = [indexed[i : i + step] for i in range(0, len(indexed), step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            shard_results = list(pool.map(lambda s: _map_shard(s, jobdef, job), shards))

    groups: dict[tuple[str, str], list[tuple[int, int, object]]] = {}
    parse_errors: dict[str, int] = {m.agent_id: 0 for m in stream.manifest}
    for shard_groups, shard_errors in shard_results:
        for key, values in shard_groups.items():
            groups.setdefault(key, []).extend(values)
        for agent_id, n in shard_errors.items():
            parse_errors[agent_id] += n

    reduced: dict[str, list[tuple[str, str]]] = {}
    for (agent_id, logical_key), values in groups.items():
        values.sort(key=lambda v: (v[0], v[1]))
        value = jobdef.reduce_values([v[2] for v in values], job)
        reduced.setdefault(agent_id, []).append((logical_key, value))

    rows: list[OutputRow] = []
    for agent_id in sorted(reduced):
        agent_rows = sorted(reduced[agent_id], key=lambda kv: kv[0])
        for logical_key, value in jobdef.finalize_agent(agent_rows, job):
            rows.append(
                OutputRow(
                    agent_id=agent_id,
                    token=tokens[agent_id],
                    logical_key=logical_key,
                    value=value,
                )
            )
    rows.sort(key=lambda r: (r.agent_id, r.logical_key))
    return JobOutput(job=job, epoch=stream.epoch, rows=tuple(rows), parse_errors=parse_errors)


def dumps_output(out: JobOutput) -> bytes:
    lines = [f"{OUTPUT_MAGIC}\t{out.job.name}\t{out.epoch}\t{len(out.rows)}"]
    for agent_id in sorted(out.parse_errors):
        lines.append(f"E\t{agent_id}\t{out.parse_errors[agent_id]}")
    for r in out.rows:
        key_b64 = base64.b64encode(r.logical_key.encode("utf-8")).decode("ascii")
        lines.append(f"O\t{r.agent_id}\t{mac_hex(r.token)}\t{key_b64}\t{r.value}")
    return "\n".join(lines).encode("utf-8") + b"\n"


def serialize_output(out: JobOutput, sink: BinaryIO) -> None:
    sink.write(dumps_output(out))


def loads_output(data: bytes) -> JobOutput:
    return deserialize_output(io.BytesIO(data))


def deserialize_output(source: BinaryIO) -> JobOutput:
    """Parse a job-output file, enforcing sortedness as part of the format.

    Job parameters (session gap, top-K) are not carried by the file; the
    returned spec holds their defaults and consumers override as needed.
    """
    lines = read_lf_lines(source)
    header = lines[0].split("\t")
    if len(header) != 4 or header[0] != OUTPUT_MAGIC:
        raise FormatError(1, f"bad magic: expected '{OUTPUT_MAGIC}\\t<job>\\t<epoch>\\t<rows>'")
    name, epoch_text, count_text = header[1], header[2], header[3]
    try:
        job = JobSpec(name=name)
    except ValueError as exc:
        raise FormatError(1, str(exc)) from exc
    epoch = parse_decimal(epoch_text, 1, "epoch")
    count = parse_decimal(count_text, 1, "row count")

    parse_errors: dict[str, int] = {}
    row = 1
    while row < len(lines) and lines[row].startswith("E\t"):
        fields = lines[row].split("\t")
        if len(fields) != 3:
            raise FormatError(row + 1, f"error line must have 3 fields, got {len(fields)}")
        _, agent_id, n_text = fields
        try:
            validate_agent_id(agent_id)
        except ValueError as exc:
            raise FormatError(row + 1, str(exc)) from exc
        if agent_id in parse_errors:
            raise FormatError(row + 1, f"duplicate error line for agent {agent_id!r}")
        parse_errors[agent_id] = parse_decimal(n_text, row + 1, "parse-error count")
        row += 1
    ids = list(parse_errors)
    if ids != sorted(ids):
        raise FormatError(row, "error lines must be sorted by agent_id")

    rows: list[OutputRow] = []
    for offset in range(count):
        line_no = row + offset + 1
        if row + offset >= len(lines):
            raise FormatError(line_no, f"expected {count} output rows, found {offset}")
        fields = lines[row + offset].split("\t")
        if len(fields) != 5 or fields[0] != "O":
            raise FormatError(line_no, "output row must be 'O' with 5 tab-separated fields")
        _, agent_id, token_hex, key_b64, value = fields
        try:
            validate_agent_id(agent_id)
            token = mac_from_hex(token_hex)
        except ValueError as exc:
            raise FormatError(line_no, str(exc)) from exc
        key_bytes = b64_decode_canonical(key_b64, line_no, "logical key")
        try:
            logical_key = key_bytes.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(line_no, f"logical key is not valid UTF-8: {exc}") from exc
        rows.append(OutputRow(agent_id=agent_id, token=token, logical_key=logical_key, value=value))

    if row + count != len(lines):
        raise FormatError(row + count + 1, f"trailing lines after {count} rows")
    keys = [(r.agent_id, r.logical_key) for r in rows]
    if keys != sorted(keys):
        raise FormatError(0, "output rows must be sorted by (agent_id, logical_key)")
    for r in rows:
        if r.agent_id not in parse_errors:
            raise FormatError(0, f"row agent {r.agent_id!r} has no error line")
    return JobOutput(job=job, epoch=epoch, rows=tuple(rows), parse_errors=parse_errors)
