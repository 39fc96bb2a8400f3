"""Empirical privacy and overhead harnesses.

The privacy harness plays the keyless adversary: a fixed, public battery of
threshold distinguishers tries to separate wheat from chaff using only what
the provider can see (MAC bytes, payload fields, per-agent volumes, sequence
numbers). Ground-truth labels exist only on the scoring side; the feature
functions never receive them. Each distinguisher fits its threshold on half
the data and is scored on the held-out half, balanced between classes, so
the reported accuracy is an honest estimate and the binomial p-value against
coin-flipping means what it says.

One subtlety keeps those p-values honest: payload-derived features are
correlated within a visitor's session (every request in a session shares
roughly one hour-of-day, for instance), and session fragments on both sides
of a record-level split would let the fitted threshold "relearn" shared
session noise. Payload-field distinguishers therefore take one vote per
visitor, keyed by (agent, client ip), which makes the scored guesses
independent draws. MAC bytes and sequence numbers carry no such clustering
and are scored per record.

Three standard experiments:

  * null calibration - real records relabeled half/half; every advantage
    must sit inside the 99% binomial band around zero, or the harness
    itself is broken;
  * mimicked chaff  - the scheme as intended; advantages should be noise;
  * broken chaff    - deliberately degenerate fake content (one path,
    status always 200) as a positive control: a battery that cannot catch
    this proves nothing about the mimicked case.

The overhead harness times the provider-side job at increasing chaff ratios
r: records processed must equal (1+r)|W| exactly, and wall time should track
it linearly. Timings are the median of five warm runs on one machine;
repeatability over rigor.
"""

from __future__ import annotations

import inspect
import math
import random
import statistics
import time
from dataclasses import dataclass, replace

from scipy.stats import binomtest

from .engine import JobSpec, run_job
from .errors import ClfParseError, ConfigError
from .pipeline import Stream, agent_emit, collect, AgentConfig
from .tagging import SecretKey, generate_key
from .weblog import LogRecord, TrafficModel, generate_chaff_content, generate_wheat, parse_clf

# z for a two-sided 99% binomial band around accuracy 0.5
_Z99 = 2.5758293035489004


@dataclass(frozen=True)
class DistinguisherResult:
    name: str
    accuracy: float
    advantage: float
    sample_size: int
    p_value: float

    def within_null_band(self) -> bool:
        """True when the advantage sits inside the 99% binomial band at n."""
        if self.sample_size == 0:
            return True
        return self.advantage <= _Z99 * 0.5 / math.sqrt(self.sample_size)


@dataclass(frozen=True)
class DistinguisherReport:
    experiment: str
    results: tuple[DistinguisherResult, ...]

    def max_advantage(self) -> float:
        return max((r.advantage for r in self.results), default=0.0)

    def to_text(self) -> str:
        lines = [f"experiment={self.experiment}"]
        for r in self.results:
            prefix = f"{self.experiment}.{r.name}"
            lines.append(f"{prefix}.accuracy={r.accuracy:.6f}")
            lines.append(f"{prefix}.advantage={r.advantage:.6f}")
            lines.append(f"{prefix}.sample_size={r.sample_size}")
            lines.append(f"{prefix}.p_value={r.p_value:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = ["experiment\tdistinguisher\tsample_size\taccuracy\tadvantage\tp_value"]
        for r in self.results:
            lines.append(
                f"{self.experiment}\t{r.name}\t{r.sample_size}"
                f"\t{r.accuracy:.6f}\t{r.advantage:.6f}\t{r.p_value:.6f}"
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# feature extraction: record -> scalar, no labels anywhere in these signatures


def _feature_mac_mean(record, parsed: LogRecord | None) -> float:
    return sum(record.tag.mac) / 32.0


def _feature_mac_stddev(record, parsed: LogRecord | None) -> float:
    mean = sum(record.tag.mac) / 32.0
    return math.sqrt(sum((b - mean) ** 2 for b in record.tag.mac) / 32.0)


def _feature_status(record, parsed: LogRecord | None) -> float | None:
    return None if parsed is None else float(parsed.status)


def _feature_bytes(record, parsed: LogRecord | None) -> float | None:
    if parsed is None:
        return None
    return -1.0 if parsed.response_bytes is None else float(parsed.response_bytes)


def _feature_hour_of_day(record, parsed: LogRecord | None) -> float | None:
    return None if parsed is None else float((parsed.timestamp // 3600) % 24)


def _feature_seq(record, parsed: LogRecord | None) -> float:
    return float(record.tag.seq)


# (name, feature, one_vote_per_visitor)
_RECORD_FEATURES = (
    ("mac_byte_mean", _feature_mac_mean, False),
    ("mac_byte_stddev", _feature_mac_stddev, False),
    ("status", _feature_status, True),
    ("bytes", _feature_bytes, True),
    ("hour_of_day", _feature_hour_of_day, True),
    ("seq_value", _feature_seq, False),
)


def battery_names() -> tuple[str, ...]:
    return tuple(name for name, _, _ in _RECORD_FEATURES) + ("path_rank", "agent_volume")


def _fit_threshold(fit: list[tuple[float, bool]]) -> tuple[float, bool]:
    """Best (threshold, wheat_iff_below) on the fit sample.

    Deterministic: candidates are scanned in value order and the first
    maximum wins.
    """
    wheat_total = sum(1 for _, w in fit if w)
    chaff_total = len(fit) - wheat_total
    by_value: dict[float, list[int]] = {}
    for value, is_wheat in fit:
        counts = by_value.setdefault(value, [0, 0])
        counts[0 if is_wheat else 1] += 1

    best_correct = max(wheat_total, chaff_total)  # degenerate all-one-class rule
    best = (-math.inf, False) if chaff_total >= wheat_total else (-math.inf, True)
    cum_w = cum_c = 0
    for value in sorted(by_value):
        cum_w += by_value[value][0]
        cum_c += by_value[value][1]
        below = cum_w + (chaff_total - cum_c)  # wheat iff f <= t
        above = (wheat_total - cum_w) + cum_c  # wheat iff f > t
        if below > best_correct:
            best_correct, best = below, (value, True)
        if above > best_correct:
            best_correct, best = above, (value, False)
    return best


def _score(
    threshold: float, wheat_below: bool, score: list[tuple[float, bool]]
) -> tuple[int, int]:
    correct = 0
    for value, is_wheat in score:
        guess_wheat = (value <= threshold) if wheat_below else (value > threshold)
        correct += guess_wheat == is_wheat
    return correct, len(score)


def _split_evaluate(
    name: str, wheat: list[float], chaff: list[float], rng: random.Random
) -> DistinguisherResult:
    """Fit on a random half per class, score balanced on the held-out half."""
    wheat = wheat[:]
    chaff = chaff[:]
    rng.shuffle(wheat)
    rng.shuffle(chaff)
    half_w, half_c = len(wheat) // 2, len(chaff) // 2
    n = min(half_w, half_c)
    fit = [(v, True) for v in wheat[:n]] + [(v, False) for v in chaff[:n]]
    score = [(v, True) for v in wheat[n : 2 * n]] + [(v, False) for v in chaff[n : 2 * n]]
    if not score:
        return DistinguisherResult(name, 0.5, 0.0, 0, 1.0)
    threshold, wheat_below = _fit_threshold(fit)
    correct, total = _score(threshold, wheat_below, score)
    accuracy = correct / total
    p = binomtest(correct, total, 0.5).pvalue
    return DistinguisherResult(
        name=name,
        accuracy=accuracy,
        advantage=abs(accuracy - 0.5),
        sample_size=total,
        p_value=float(p),
    )


def run_distinguishers(
    stream: Stream, kinds: dict[str, str], seed: int
) -> DistinguisherReport:
    """Run the fixed battery against a stream with known (scoring-only) kinds.

    ``kinds`` maps agent id to "real"/"fake" and is consulted exclusively
    when splitting and scoring; the feature functions see records only.
    """
    labels: dict[str, bool] = {}
    for m in stream.manifest:
        kind = kinds.get(m.agent_id)
        if kind not in ("real", "fake"):
            raise ConfigError(f"no ground-truth kind for agent {m.agent_id!r}")
        labels[m.agent_id] = kind == "real"
    n_wheat = sum(m.count for m in stream.manifest if labels[m.agent_id])
    n_chaff = sum(m.count for m in stream.manifest if not labels[m.agent_id])
    if n_wheat == 0 or n_chaff == 0:
        raise ConfigError("distinguishers need both wheat and chaff in the stream")
    if n_wheat != n_chaff:
        raise ConfigError(f"balanced stream required, got {n_wheat} wheat vs {n_chaff} chaff")

    parsed: list[LogRecord | None] = []
    for record in stream.records:
        try:
            parsed.append(parse_clf(record.payload))
        except ClfParseError:
            parsed.append(None)

    path_counts: dict[str, int] = {}
    for p in parsed:
        if p is not None:
            path_counts[p.path] = path_counts.get(p.path, 0) + 1
    ranked = sorted(path_counts, key=lambda path: (-path_counts[path], path))
    path_rank = {path: float(i) for i, path in enumerate(ranked)}
    volumes = {m.agent_id: float(m.count) for m in stream.manifest}

    # one representative record per visitor (agent, client ip), stream order
    visitor_pick: dict[tuple[str, str], int] = {}
    for index, p in enumerate(parsed):
        if p is not None:
            visitor_pick.setdefault((stream.records[index].tag.agent_id, p.client_ip), index)
    visitor_indices = set(visitor_pick.values())

    rng = random.Random(seed)
    results = []
    for name, feature, per_visitor in _RECORD_FEATURES:
        wheat_values, chaff_values = [], []
        for index, (record, p) in enumerate(zip(stream.records, parsed)):
            if per_visitor and index not in visitor_indices:
                continue
            value = feature(record, p)
            if value is None:
                continue
            (wheat_values if labels[record.tag.agent_id] else chaff_values).append(value)
        results.append(_split_evaluate(name, wheat_values, chaff_values, rng))

    wheat_values, chaff_values = [], []
    for index in sorted(visitor_indices):
        p = parsed[index]
        value = path_rank[p.path]
        is_wheat = labels[stream.records[index].tag.agent_id]
        (wheat_values if is_wheat else chaff_values).append(value)
    results.append(_split_evaluate("path_rank", wheat_values, chaff_values, rng))

    wheat_agents = sorted(a for a, real in labels.items() if real)
    chaff_agents = sorted(a for a, real in labels.items() if not real)
    results.append(
        _split_evaluate(
            "agent_volume",
            [volumes[a] for a in wheat_agents],
            [volumes[a] for a in chaff_agents],
            rng,
        )
    )
    return DistinguisherReport(experiment="battery", results=tuple(results))


def assert_label_hygiene() -> None:
    """Interface-level check: no feature function can receive labels."""
    for name, feature, _ in _RECORD_FEATURES:
        params = list(inspect.signature(feature).parameters)
        if any("label" in p or "kind" in p for p in params):
            raise AssertionError(f"feature {name} signature mentions labels: {params}")
        if len(params) != 2:
            raise AssertionError(f"feature {name} must take (record, parsed) only")


# ---------------------------------------------------------------------------
# experiment construction


def _emit_stream(
    shared_key: SecretKey,
    real_contents: list[list[LogRecord]],
    fake_contents: list[list[LogRecord]],
    seed: int,
) -> tuple[Stream, dict[str, str]]:
    """Build a stream from prepared per-agent contents; ids hide the kind.

    Agent ids are drawn from one sequential namespace and shuffled across
    kinds, so the id itself carries no signal.
    """
    rng = random.Random(seed)
    total = len(real_contents) + len(fake_contents)
    assignment = [f"src-{i:02d}" for i in range(total)]
    rng.shuffle(assignment)
    batches = []
    kinds: dict[str, str] = {}
    epoch = 1
    for i, records in enumerate(real_contents):
        agent_id = assignment[i]
        kinds[agent_id] = "real"
        cfg = AgentConfig(agent_id=agent_id, key=shared_key, kind="real", content_seed=0)
        batches.append(agent_emit(cfg, records, epoch))
    for j, records in enumerate(fake_contents):
        agent_id = assignment[len(real_contents) + j]
        kinds[agent_id] = "fake"
        fake_key = generate_key(seed=rng.getrandbits(63))
        cfg = AgentConfig(agent_id=agent_id, key=fake_key, kind="fake", content_seed=0)
        batches.append(agent_emit(cfg, records, epoch))
    return collect(batches, shuffle_seed=rng.getrandbits(63)), kinds


def make_broken_chaff(model: TrafficModel, n: int, seed: int) -> list[LogRecord]:
    """Deliberately distinguishable chaff: single page, status always 200."""
    top_path = max(model.page_catalog, key=lambda pw: pw[1])[0]
    degenerate = replace(model, page_catalog=((top_path, 1.0),), search_terms=())
    records = generate_chaff_content(degenerate, n, seed)
    return [
        replace(r, status=200, response_bytes=r.response_bytes or 1024) for r in records
    ]


def privacy_experiments(
    model: TrafficModel,
    records_per_side: int = 10000,
    agents_per_side: int = 4,
    seed: int = 0,
) -> dict[str, DistinguisherReport]:
    """Run null calibration, the mimicked-chaff battery, and the positive control."""
    if records_per_side % agents_per_side != 0:
        raise ConfigError("records_per_side must divide evenly among agents")
    per_agent = records_per_side // agents_per_side
    shared = generate_key(seed=_mix(seed, 1))

    # Null calibration: every agent is real and every record is honest wheat
    # under the shared key; half the agents get *relabeled* fake purely for
    # scoring. Any advantage here is harness bias, not signal.
    null_contents = [
        generate_wheat(model, per_agent, _mix(seed, 100 + i)) for i in range(2 * agents_per_side)
    ]
    null_stream, null_ids = _emit_stream(shared, null_contents, [], _mix(seed, 2))
    rng = random.Random(_mix(seed, 3))
    relabeled = sorted(null_ids)
    rng.shuffle(relabeled)
    null_kinds = {a: ("real" if i < agents_per_side else "fake") for i, a in enumerate(relabeled)}
    null_report = replace(
        run_distinguishers(null_stream, null_kinds, seed=_mix(seed, 3)),
        experiment="null",
    )

    wheat_contents = [
        generate_wheat(model, per_agent, _mix(seed, 200 + i)) for i in range(agents_per_side)
    ]
    chaff_contents = [
        generate_chaff_content(model, per_agent, _mix(seed, 300 + i))
        for i in range(agents_per_side)
    ]
    mimic_stream, mimic_kinds = _emit_stream(shared, wheat_contents, chaff_contents, _mix(seed, 4))
    mimic_report = replace(
        run_distinguishers(mimic_stream, mimic_kinds, seed=_mix(seed, 5)),
        experiment="mimicked",
    )

    broken_contents = [
        make_broken_chaff(model, per_agent, _mix(seed, 400 + i)) for i in range(agents_per_side)
    ]
    broken_stream, broken_kinds = _emit_stream(shared, wheat_contents, broken_contents, _mix(seed, 6))
    broken_report = replace(
        run_distinguishers(broken_stream, broken_kinds, seed=_mix(seed, 7)),
        experiment="broken",
    )
    return {"null": null_report, "mimicked": mimic_report, "broken": broken_report}


def _mix(seed: int, label: int) -> int:
    return (seed * 1_000_003 + label) % (2**63)


# ---------------------------------------------------------------------------
# overhead


@dataclass(frozen=True)
class OverheadRow:
    ratio: float
    total_records: int
    csp_seconds: float
    tagging_seconds: float
    winnow_seconds: float


@dataclass(frozen=True)
class OverheadReport:
    job_name: str
    wheat_size: int
    rows: tuple[OverheadRow, ...]

    def to_text(self) -> str:
        lines = [f"job={self.job_name}", f"wheat_size={self.wheat_size}"]
        for row in self.rows:
            prefix = f"overhead.r{row.ratio:g}"
            lines.append(f"{prefix}.total_records={row.total_records}")
            lines.append(f"{prefix}.csp_seconds={row.csp_seconds:.6f}")
            lines.append(f"{prefix}.tagging_seconds={row.tagging_seconds:.6f}")
            lines.append(f"{prefix}.winnow_seconds={row.winnow_seconds:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = ["ratio\ttotal_records\tcsp_seconds\ttagging_seconds\twinnow_seconds"]
        for row in self.rows:
            lines.append(
                f"{row.ratio:g}\t{row.total_records}\t{row.csp_seconds:.6f}"
                f"\t{row.tagging_seconds:.6f}\t{row.winnow_seconds:.6f}"
            )
        return "\n".join(lines) + "\n"


def run_overhead(
    job: JobSpec,
    wheat_size: int,
    ratios: list[float],
    workers: int = 1,
    seed: int = 0,
    model: TrafficModel | None = None,
    timing_runs: int = 5,
) -> OverheadReport:
    """Time the provider-side job at each chaff ratio.

    Wheat is generated once; each ratio adds round(r * wheat_size) chaff
    records, builds the stream, and times ``run_job`` (median of
    ``timing_runs`` warm runs).
    """
    from .analyzer import winnow_results

    if wheat_size < 1000:
        raise ConfigError("wheat_size must be >= 1000 for stable timing")
    if timing_runs < 1:
        raise ConfigError("timing_runs must be >= 1")
    model = model or _default_model()
    shared = generate_key(seed=_mix(seed, 11))
    wheat = generate_wheat(model, wheat_size, _mix(seed, 12))

    rows = []
    for ratio in ratios:
        if ratio < 0:
            raise ConfigError("ratios must be non-negative")
        chaff_n = round(ratio * wheat_size)
        chaff = generate_chaff_content(model, chaff_n, _mix(seed, 13)) if chaff_n else []

        t0 = time.perf_counter()
        real_cfg = AgentConfig(agent_id="src-00", key=shared, kind="real", content_seed=0)
        batches = [agent_emit(real_cfg, wheat, epoch=1)]
        if chaff:
            fake_cfg = AgentConfig(
                agent_id="src-01",
                key=generate_key(seed=_mix(seed, 14)),
                kind="fake",
                content_seed=0,
            )
            batches.append(agent_emit(fake_cfg, chaff, epoch=1))
        tagging_seconds = time.perf_counter() - t0

        stream = collect(batches, shuffle_seed=_mix(seed, 15))
        timings = []
        output = None
        for _ in range(timing_runs):
            t0 = time.perf_counter()
            output = run_job(job, stream, workers=workers)
            timings.append(time.perf_counter() - t0)

        t0 = time.perf_counter()
        winnow_results(shared, output)
        winnow_seconds = time.perf_counter() - t0

        rows.append(
            OverheadRow(
                ratio=ratio,
                total_records=len(stream.records),
                csp_seconds=statistics.median(timings),
                tagging_seconds=tagging_seconds,
                winnow_seconds=winnow_seconds,
            )
        )
    return OverheadReport(job_name=job.name, wheat_size=wheat_size, rows=tuple(rows))


def _default_model() -> TrafficModel:
    from .config import default_traffic_model

    return default_traffic_model()
