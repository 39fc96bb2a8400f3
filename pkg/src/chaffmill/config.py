"""Pipeline configuration: agents, keys, traffic model, jobs.

The file format is INI-style ``key = value`` sections, one ``[agent.<id>]``
table per agent, chosen for hand-editability and unambiguous round-tripping:

    [pipeline]
    epoch = 1
    shared_key = <64 hex digits>        ; or shared_keyfile = <path>
    shuffle_seed = 7

    [traffic]
    pages = /index.html:30.0, /products:12.0, /search:9.0
    terms = shoes:5.0, gift card:3.0
    ...

    [jobs]
    run = page_hits session_stats trending_terms

    [agent.web-a]
    kind = real
    content_seed = 11
    records = 500

Fake agents may pin their own 64-hex ``key``; when omitted, a per-agent key
is derived from the shared key and the agent id, so configs stay small and
runs stay reproducible without ever writing a guessable key.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace
from hashlib import sha256
from hmac import new as hmac_new
from pathlib import Path

from .engine import JOB_NAMES, JobSpec
from .errors import ConfigError
from .pipeline import AgentConfig
from .tagging import SecretKey, validate_agent_id
from .weblog import TrafficModel

_PIPELINE_KEYS = {"epoch", "shared_key", "shared_keyfile", "shuffle_seed"}
_TRAFFIC_KEYS = {
    "pages",
    "terms",
    "ip_pool_size",
    "session_gap_seconds",
    "requests_per_session_mean",
    "time_start",
    "time_end",
}
_AGENT_KEYS = {"kind", "content_seed", "records", "key"}

DEFAULT_PAGES = (
    ("/index.html", 30.0),
    ("/products", 14.0),
    ("/products/widgets", 9.0),
    ("/products/gadgets", 7.0),
    ("/search", 9.0),
    ("/cart", 6.0),
    ("/checkout", 4.0),
    ("/account", 4.0),
    ("/help", 3.0),
    ("/about", 2.0),
    ("/blog", 5.0),
    ("/blog/launch-notes", 3.0),
    ("/contact", 2.0),
    ("/terms", 1.0),
)
DEFAULT_TERMS = (
    ("shoes", 9.0),
    ("hats", 6.0),
    ("socks", 5.0),
    ("widgets", 8.0),
    ("gadgets", 7.0),
    ("gift card", 4.0),
    ("returns", 3.0),
    ("blue widget", 2.0),
    ("warranty", 2.0),
    ("shipping", 5.0),
)


def default_traffic_model() -> TrafficModel:
    return TrafficModel(page_catalog=DEFAULT_PAGES, search_terms=DEFAULT_TERMS)


@dataclass(frozen=True)
class AgentEntry:
    """One agent as configured: identity, kind, volume, optional pinned key."""

    agent_id: str
    kind: str
    content_seed: int
    records: int
    key: SecretKey | None = None  # fake agents only; None means derived


@dataclass(frozen=True)
class PipelineConfig:
    epoch: int
    shared_key: SecretKey
    shuffle_seed: int
    model: TrafficModel
    agents: tuple[AgentEntry, ...]
    jobs: tuple[JobSpec, ...]

    def __post_init__(self) -> None:
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ConfigError("agent ids must be unique")
        if not any(a.kind == "real" for a in self.agents):
            raise ConfigError("configuration needs at least one real agent")
        for a in self.agents:
            if a.kind == "real" and a.key is not None:
                raise ConfigError(f"agent {a.agent_id}: real agents use the shared key only")
            if a.kind == "fake" and a.key is not None and a.key == self.shared_key:
                raise ConfigError(f"agent {a.agent_id}: fake key must differ from the shared key")
            if a.records < 0:
                raise ConfigError(f"agent {a.agent_id}: records must be >= 0")
        if not self.jobs:
            raise ConfigError("configuration needs at least one job")

    def agent_key(self, entry: AgentEntry) -> SecretKey:
        if entry.kind == "real":
            return self.shared_key
        if entry.key is not None:
            return entry.key
        return derive_fake_key(self.shared_key, entry.agent_id)

    def agent_configs(self) -> list[AgentConfig]:
        return [
            AgentConfig(
                agent_id=a.agent_id,
                key=self.agent_key(a),
                kind=a.kind,  # type: ignore[arg-type]
                content_seed=a.content_seed,
            )
            for a in self.agents
        ]

    def kinds(self) -> dict[str, str]:
        return {a.agent_id: a.kind for a in self.agents}

    def wheat_only(self) -> "PipelineConfig":
        """The same pipeline with every fake agent removed."""
        return replace(self, agents=tuple(a for a in self.agents if a.kind == "real"))


def derive_fake_key(shared_key: SecretKey, agent_id: str) -> SecretKey:
    """Deterministic per-agent fake key, anchored on the shared secret.

    Anchoring on the shared key matters: a fake key derived from public
    fields alone could be recomputed by the provider, which would unmask the
    chaff. HMAC keeps the derivation one-way and the result independent of
    the shared key for anyone who lacks it.
    """
    digest = hmac_new(shared_key.data, b"CWFKY\x00" + agent_id.encode("utf-8"), sha256).digest()
    key = SecretKey(digest)
    if key == shared_key:  # astronomically unlikely; fail loudly if it happens
        raise ConfigError(f"derived fake key for {agent_id} collides with the shared key")
    return key


def _fmt_weights(pairs) -> str:
    return ", ".join(f"{name}:{weight!r}" for name, weight in pairs)


def _parse_weights(text: str, what: str) -> tuple[tuple[str, float], ...]:
    pairs = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        name, sep, weight = token.rpartition(":")
        if not sep or not name:
            raise ConfigError(f"{what}: expected comma-separated name:weight tokens, got {token!r}")
        try:
            pairs.append((name, float(weight)))
        except ValueError:
            raise ConfigError(f"{what}: bad weight in {token!r}") from None
    if not pairs:
        raise ConfigError(f"{what}: needs at least one name:weight token")
    return tuple(pairs)


def _get_int(section, key: str, where: str) -> int:
    raw = section.get(key)
    if raw is None:
        raise ConfigError(f"{where}: missing required key {key!r}")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{where}: {key} must be an integer, got {raw!r}") from None


def loads_config(text: str, base_dir: Path | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None, strict=True)
    parser.optionxform = str  # agent ids and paths are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc

    if "pipeline" not in parser:
        raise ConfigError("missing [pipeline] section")
    pipe = parser["pipeline"]
    for key in pipe:
        if key not in _PIPELINE_KEYS:
            raise ConfigError(f"[pipeline]: unknown key {key!r}")
    epoch = _get_int(pipe, "epoch", "[pipeline]")
    shuffle_seed = _get_int(pipe, "shuffle_seed", "[pipeline]")

    key_hex = pipe.get("shared_key")
    keyfile = pipe.get("shared_keyfile")
    if (key_hex is None) == (keyfile is None):
        raise ConfigError("[pipeline]: exactly one of shared_key / shared_keyfile is required")
    if keyfile is not None:
        path = Path(keyfile)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            key_hex = path.read_text(encoding="ascii")
        except OSError as exc:
            raise ConfigError(f"[pipeline]: cannot read shared_keyfile: {exc}") from exc
    try:
        shared_key = SecretKey.from_hex(key_hex)
    except ValueError as exc:
        raise ConfigError(f"[pipeline]: shared_key: {exc}") from exc

    model = default_traffic_model()
    if "traffic" in parser:
        traffic = parser["traffic"]
        for key in traffic:
            if key not in _TRAFFIC_KEYS:
                raise ConfigError(f"[traffic]: unknown key {key!r}")
        kwargs: dict = {}
        if "pages" in traffic:
            kwargs["page_catalog"] = _parse_weights(traffic["pages"], "[traffic] pages")
        else:
            kwargs["page_catalog"] = DEFAULT_PAGES
        if "terms" in traffic:
            kwargs["search_terms"] = _parse_weights(traffic["terms"], "[traffic] terms")
        else:
            kwargs["search_terms"] = DEFAULT_TERMS
        if "ip_pool_size" in traffic:
            kwargs["ip_pool_size"] = _get_int(traffic, "ip_pool_size", "[traffic]")
        if "session_gap_seconds" in traffic:
            kwargs["session_gap_seconds"] = _get_int(traffic, "session_gap_seconds", "[traffic]")
        if "requests_per_session_mean" in traffic:
            try:
                kwargs["requests_per_session_mean"] = float(traffic["requests_per_session_mean"])
            except ValueError:
                raise ConfigError("[traffic]: requests_per_session_mean must be a float") from None
        if "time_start" in traffic or "time_end" in traffic:
            kwargs["time_span"] = (
                _get_int(traffic, "time_start", "[traffic]"),
                _get_int(traffic, "time_end", "[traffic]"),
            )
        try:
            model = TrafficModel(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[traffic]: {exc}") from exc

    jobs: list[JobSpec] = []
    job_names = list(JOB_NAMES)
    if "jobs" in parser:
        raw = parser["jobs"].get("run", "")
        job_names = raw.split()
        if not job_names:
            raise ConfigError("[jobs]: 'run' must list at least one job")
    for name in job_names:
        params: dict = {}
        section_name = f"job.{name}"
        if section_name in parser:
            section = parser[section_name]
            if "session_gap" in section:
                params["session_gap"] = _get_int(section, "session_gap", f"[{section_name}]")
            if "top_k" in section:
                params["top_k"] = _get_int(section, "top_k", f"[{section_name}]")
            for key in section:
                if key not in ("session_gap", "top_k"):
                    raise ConfigError(f"[{section_name}]: unknown key {key!r}")
        try:
            jobs.append(JobSpec(name=name, **params))
        except ValueError as exc:
            raise ConfigError(f"[jobs]: {exc}") from exc

    agents: list[AgentEntry] = []
    for section_name in parser.sections():
        if not section_name.startswith("agent."):
            if section_name in ("pipeline", "traffic", "jobs") or section_name.startswith("job."):
                continue
            raise ConfigError(f"unknown section [{section_name}]")
        agent_id = section_name[len("agent.") :]
        try:
            validate_agent_id(agent_id)
        except ValueError as exc:
            raise ConfigError(f"[{section_name}]: {exc}") from exc
        section = parser[section_name]
        for key in section:
            if key not in _AGENT_KEYS:
                raise ConfigError(f"[{section_name}]: unknown key {key!r}")
        kind = section.get("kind")
        if kind not in ("real", "fake"):
            raise ConfigError(f"[{section_name}]: kind must be 'real' or 'fake'")
        key = None
        if "key" in section:
            if kind == "real":
                raise ConfigError(f"[{section_name}]: real agents must not pin a key")
            try:
                key = SecretKey.from_hex(section["key"])
            except ValueError as exc:
                raise ConfigError(f"[{section_name}]: key: {exc}") from exc
        agents.append(
            AgentEntry(
                agent_id=agent_id,
                kind=kind,
                content_seed=_get_int(section, "content_seed", f"[{section_name}]"),
                records=_get_int(section, "records", f"[{section_name}]"),
                key=key,
            )
        )
    if not agents:
        raise ConfigError("configuration needs at least one [agent.<id>] section")

    return PipelineConfig(
        epoch=epoch,
        shared_key=shared_key,
        shuffle_seed=shuffle_seed,
        model=model,
        agents=tuple(agents),
        jobs=tuple(jobs),
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text, base_dir=path.parent)


def dumps_config(config: PipelineConfig) -> str:
    """Render a config in its file format; ``loads_config`` inverts this."""
    model = config.model
    out = io.StringIO()
    out.write("[pipeline]\n")
    out.write(f"epoch = {config.epoch}\n")
    out.write(f"shared_key = {config.shared_key.hex()}\n")
    out.write(f"shuffle_seed = {config.shuffle_seed}\n")
    out.write("\n[traffic]\n")
    out.write(f"pages = {_fmt_weights(model.page_catalog)}\n")
    if model.search_terms:
        out.write(f"terms = {_fmt_weights(model.search_terms)}\n")
    out.write(f"ip_pool_size = {model.ip_pool_size}\n")
    out.write(f"session_gap_seconds = {model.session_gap_seconds}\n")
    out.write(f"requests_per_session_mean = {model.requests_per_session_mean!r}\n")
    out.write(f"time_start = {model.time_span[0]}\n")
    out.write(f"time_end = {model.time_span[1]}\n")
    out.write("\n[jobs]\n")
    out.write(f"run = {' '.join(j.name for j in config.jobs)}\n")
    for job in config.jobs:
        out.write(f"\n[job.{job.name}]\n")
        out.write(f"session_gap = {job.session_gap}\n")
        out.write(f"top_k = {job.top_k}\n")
    for agent in config.agents:
        out.write(f"\n[agent.{agent.agent_id}]\n")
        out.write(f"kind = {agent.kind}\n")
        out.write(f"content_seed = {agent.content_seed}\n")
        out.write(f"records = {agent.records}\n")
        if agent.key is not None:
            out.write(f"key = {agent.key.hex()}\n")
    return out.getvalue()


def example_config() -> PipelineConfig:
    """A small, fully deterministic demonstration pipeline."""
    shared = SecretKey(bytes.fromhex(
        "6b2a77f54c19d3c2a55e0c9b817f4d2e95310a6cc8de44b1f09276e5a3cd8014"
    ))
    agents = (
        AgentEntry(agent_id="agent-a", kind="real", content_seed=101, records=400),
        AgentEntry(agent_id="agent-b", kind="real", content_seed=102, records=350),
        AgentEntry(agent_id="agent-c", kind="fake", content_seed=103, records=400),
        AgentEntry(agent_id="agent-d", kind="fake", content_seed=104, records=350),
    )
    jobs = (
        JobSpec(name="page_hits"),
        JobSpec(name="session_stats", session_gap=1800),
        JobSpec(name="trending_terms", top_k=10),
    )
    return PipelineConfig(
        epoch=1,
        shared_key=shared,
        shuffle_seed=7,
        model=default_traffic_model(),
        agents=agents,
        jobs=jobs,
    )
