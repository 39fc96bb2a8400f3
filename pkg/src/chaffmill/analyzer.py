"""Consumer-side analysis: verify attestation tokens, winnow, merge, report.

The analyzer holds the shared secret key the real agents used. An agent's
rows survive iff the token echoed on them matches a recomputation for that
agent and epoch; everything else is dropped without ceremony, which is the
entire trick: fake agents' aggregates and tampered real ones look exactly
alike from here, and both go to the same place.

Rows from distinct verified agents describe disjoint underlying traffic, so
merging is job-specific summation (page and term counts add; session counts,
durations and request counts add field-wise), with trending_terms re-ranked
to its top-K after the merge.

Clean output file grammar (UTF-8, LF, tabs):

    #CWC1<TAB><job-name><TAB><row-count>
    C<TAB><logical_key-base64><TAB><value>        sorted by logical key
"""

from __future__ import annotations

import base64
import io
import re
from dataclasses import dataclass, field
from typing import BinaryIO

from ._text import b64_decode_canonical, parse_decimal, read_lf_lines
from .engine import JobOutput, JobSpec
from .errors import FormatError
from .tagging import SecretKey, compute_agent_token, constant_time_equal

CLEAN_MAGIC = "#CWC1"

_SESSION_VALUE_RE = re.compile(r"^sessions=(\d+);total_duration=(\d+);requests=(\d+)$")


@dataclass(frozen=True)
class CleanOutput:
    """Winnowed, merged results: what a wheat-only run would have produced."""

    job: JobSpec
    rows: tuple[tuple[str, str], ...]  # (logical_key, merged value), sorted
    verified_agent_ids: tuple[str, ...]
    dropped_agent_ids: tuple[str, ...]
    integrity_flags: tuple[str, ...]

    def __post_init__(self) -> None:
        keys = [k for k, _ in self.rows]
        if keys != sorted(keys):
            raise ValueError("clean rows must be sorted by logical_key")
        if set(self.verified_agent_ids) & set(self.dropped_agent_ids):
            raise ValueError("an agent cannot be both verified and dropped")


def _merge_counts(values: list[str]) -> str:
    total = 0
    for value in values:
        if not value.isdigit():
            raise FormatError(0, f"bad count value {value!r}")
        total += int(value)
    return str(total)


def _merge_session_values(values: list[str]) -> str:
    sessions = duration = requests = 0
    for value in values:
        m = _SESSION_VALUE_RE.match(value)
        if not m:
            raise FormatError(0, f"bad session_stats value {value!r}")
        sessions += int(m.group(1))
        duration += int(m.group(2))
        requests += int(m.group(3))
    return f"sessions={sessions};total_duration={duration};requests={requests}"


def winnow_results(shared_key: SecretKey, output: JobOutput) -> CleanOutput:
    """Drop rows whose agent token fails verification, merge the rest.

    An agent is verified only if every one of its rows echoes the correct
    token; a mix of good and bad copies is a tamper signal, so the whole
    agent is dropped and flagged. Agents that appear in the error table but
    produced no rows cannot be verified at all and are dropped with a flag.
    """
    seen: dict[str, int] = {}
    for r in output.rows:
        key = (r.agent_id, r.logical_key)
        if key in seen:
            raise FormatError(0, f"duplicate row for {key!r}")
        seen[key] = 1

    tokens_by_agent: dict[str, set[bytes]] = {}
    for r in output.rows:
        tokens_by_agent.setdefault(r.agent_id, set()).add(r.token)

    all_agents = sorted(set(output.parse_errors) | set(tokens_by_agent))
    verified: list[str] = []
    dropped: list[str] = []
    flags: list[str] = []
    for agent_id in all_agents:
        tokens = tokens_by_agent.get(agent_id)
        if tokens is None:
            dropped.append(agent_id)
            flags.append(f"agent {agent_id}: present in error table but produced no rows")
            continue
        expected = compute_agent_token(shared_key, agent_id, output.epoch)
        matches = [constant_time_equal(expected, t) for t in tokens]
        if len(tokens) > 1:
            dropped.append(agent_id)
            flags.append(f"agent {agent_id}: inconsistent token copies across rows")
        elif all(matches):
            verified.append(agent_id)
        else:
            dropped.append(agent_id)

    verified_set = set(verified)
    by_key: dict[str, list[str]] = {}
    for r in output.rows:
        if r.agent_id in verified_set:
            by_key.setdefault(r.logical_key, []).append(r.value)

    if output.job.name == "session_stats":
        merge = _merge_session_values
    else:
        merge = _merge_counts
    merged = [(k, merge(values)) for k, values in sorted(by_key.items())]

    if output.job.name == "trending_terms":
        merged.sort(key=lambda kv: (-int(kv[1]), kv[0]))
        merged = sorted(merged[: output.job.top_k], key=lambda kv: kv[0])

    return CleanOutput(
        job=output.job,
        rows=tuple(merged),
        verified_agent_ids=tuple(verified),
        dropped_agent_ids=tuple(dropped),
        integrity_flags=tuple(flags),
    )


@dataclass(frozen=True)
class MetricsReport:
    """Run bookkeeping combining keyless analysis with consumer-side truth."""

    job_name: str
    chaff_ratio: float
    records_real: int
    records_fake: int
    records_total: int
    rows_kept: int
    agents_verified: tuple[str, ...]
    agents_dropped: tuple[str, ...]
    parse_errors: dict[str, int]
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_text(self) -> str:
        lines = [
            f"job={self.job_name}",
            f"chaff_ratio={self.chaff_ratio:.6f}",
            f"records_real={self.records_real}",
            f"records_fake={self.records_fake}",
            f"records_total={self.records_total}",
            f"rows_kept={self.rows_kept}",
            f"agents_verified={','.join(self.agents_verified)}",
            f"agents_dropped={','.join(self.agents_dropped)}",
        ]
        for agent_id in sorted(self.parse_errors):
            lines.append(f"parse_errors.{agent_id}={self.parse_errors[agent_id]}")
        for i, flag in enumerate(self.flags):
            lines.append(f"flag.{i}={flag}")
        return "\n".join(lines) + "\n"


def report_metrics(
    clean: CleanOutput,
    output: JobOutput,
    agent_kinds: dict[str, str],
    agent_counts: dict[str, int],
) -> MetricsReport:
    """Combine the clean output with consumer-side agent bookkeeping.

    ``agent_kinds`` and ``agent_counts`` are the consumer's own records of
    which agents were real/fake and how many records each one emitted; they
    never travel through the provider.
    """
    real = sum(n for a, n in agent_counts.items() if agent_kinds.get(a) == "real")
    fake = sum(n for a, n in agent_counts.items() if agent_kinds.get(a) == "fake")
    flags = list(clean.integrity_flags)
    for agent_id in clean.dropped_agent_ids:
        if agent_kinds.get(agent_id) == "real":
            flags.append(f"agent {agent_id}: real agent failed verification (tampering?)")
    for agent_id in clean.verified_agent_ids:
        if output.parse_errors.get(agent_id, 0):
            flags.append(
                f"agent {agent_id}: verified but {output.parse_errors[agent_id]} records "
                "failed to parse"
            )
    return MetricsReport(
        job_name=clean.job.name,
        chaff_ratio=(fake / real) if real else 0.0,
        records_real=real,
        records_fake=fake,
        records_total=real + fake,
        rows_kept=len(clean.rows),
        agents_verified=clean.verified_agent_ids,
        agents_dropped=clean.dropped_agent_ids,
        parse_errors=dict(output.parse_errors),
        flags=tuple(flags),
    )


def dumps_clean(clean: CleanOutput) -> bytes:
    lines = [f"{CLEAN_MAGIC}\t{clean.job.name}\t{len(clean.rows)}"]
    for logical_key, value in clean.rows:
        key_b64 = base64.b64encode(logical_key.encode("utf-8")).decode("ascii")
        lines.append(f"C\t{key_b64}\t{value}")
    return "\n".join(lines).encode("utf-8") + b"\n"


def serialize_clean(clean: CleanOutput, sink: BinaryIO) -> None:
    sink.write(dumps_clean(clean))


def loads_clean(data: bytes) -> CleanOutput:
    return deserialize_clean(io.BytesIO(data))


def deserialize_clean(source: BinaryIO) -> CleanOutput:
    """Parse a clean-output file; carries rows only, not the agent lists."""
    lines = read_lf_lines(source)
    header = lines[0].split("\t")
    if len(header) != 3 or header[0] != CLEAN_MAGIC:
        raise FormatError(1, f"bad magic: expected '{CLEAN_MAGIC}\\t<job>\\t<rows>'")
    try:
        job = JobSpec(name=header[1])
    except ValueError as exc:
        raise FormatError(1, str(exc)) from exc
    count = parse_decimal(header[2], 1, "row count")
    if 1 + count != len(lines):
        raise FormatError(0, f"expected {count} rows, found {len(lines) - 1}")
    rows: list[tuple[str, str]] = []
    for offset in range(count):
        line_no = offset + 2
        fields = lines[offset + 1].split("\t")
        if len(fields) != 3 or fields[0] != "C":
            raise FormatError(line_no, "clean row must be 'C' with 3 tab-separated fields")
        key_bytes = b64_decode_canonical(fields[1], line_no, "logical key")
        try:
            logical_key = key_bytes.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(line_no, f"logical key is not valid UTF-8: {exc}") from exc
        rows.append((logical_key, fields[2]))
    keys = [k for k, _ in rows]
    if keys != sorted(keys):
        raise FormatError(0, "clean rows must be sorted by logical_key")
    return CleanOutput(
        job=job,
        rows=tuple(rows),
        verified_agent_ids=(),
        dropped_agent_ids=(),
        integrity_flags=(),
    )
