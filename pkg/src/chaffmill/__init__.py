"""Chaff-obfuscated log analytics.

Real agents MAC-tag their records under a shared secret key; fake agents
emit statistically matched decoys under their own keys; an untrusted,
key-free MapReduce engine analyzes everything; the analyzer winnows the
results back down to exactly what a wheat-only run would have produced.
"""

from .adversary import (
    DistinguisherReport,
    DistinguisherResult,
    OverheadReport,
    privacy_experiments,
    run_distinguishers,
    run_overhead,
)
from .analyzer import CleanOutput, MetricsReport, report_metrics, winnow_results
from .config import PipelineConfig, example_config, load_config, loads_config
from .engine import JobOutput, JobSpec, run_job
from .errors import (
    ChaffmillError,
    ClfParseError,
    ConfigError,
    FormatError,
    PayloadError,
)
from .pipeline import (
    AgentConfig,
    Batch,
    Stream,
    agent_emit,
    collect,
    deserialize_stream,
    serialize_stream,
    winnow_stream,
)
from .tagging import (
    AgentToken,
    SecretKey,
    Tag,
    TaggedRecord,
    compute_agent_token,
    compute_record_mac,
    generate_key,
    make_chaff_record,
    make_wheat_record,
    verify_record,
    winnow_records,
)
from .weblog import (
    LogRecord,
    TrafficModel,
    format_clf,
    generate_chaff_content,
    generate_wheat,
    parse_clf,
)

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "AgentToken",
    "Batch",
    "ChaffmillError",
    "CleanOutput",
    "ClfParseError",
    "ConfigError",
    "DistinguisherReport",
    "DistinguisherResult",
    "FormatError",
    "JobOutput",
    "JobSpec",
    "LogRecord",
    "MetricsReport",
    "OverheadReport",
    "PayloadError",
    "PipelineConfig",
    "SecretKey",
    "Stream",
    "Tag",
    "TaggedRecord",
    "TrafficModel",
    "agent_emit",
    "collect",
    "compute_agent_token",
    "compute_record_mac",
    "deserialize_stream",
    "example_config",
    "format_clf",
    "generate_chaff_content",
    "generate_key",
    "generate_wheat",
    "load_config",
    "loads_config",
    "make_chaff_record",
    "make_wheat_record",
    "parse_clf",
    "privacy_experiments",
    "report_metrics",
    "run_distinguishers",
    "run_job",
    "run_overhead",
    "serialize_stream",
    "verify_record",
    "winnow_records",
    "winnow_results",
    "winnow_stream",
]
