"""Command-line surface wiring the pipeline into reproducible runs.

Role separation is enforced at the flag level: ``run`` (the provider-side
command) accepts no key material at all, while ``emit``, ``winnow``, ``eval``
and ``e2e`` are consumer-side. Exit codes are stable for shell harnesses:

    0  success
    1  verification or equality failure
    2  file format error
    3  configuration error
"""

from __future__ import annotations

import difflib
import os
import sys
import tempfile
from pathlib import Path

import click

from . import adversary
from .analyzer import dumps_clean, report_metrics, winnow_results
from .config import PipelineConfig, example_config, load_config
from .engine import JOB_NAMES, JobSpec, deserialize_output, dumps_output, run_job
from .errors import ChaffmillError, ConfigError, FormatError
from .pipeline import (
    agent_emit,
    collect,
    deserialize_stream,
    dumps_stream,
    winnow_stream,
)
from .tagging import SecretKey, generate_key
from .weblog import generate_chaff_content, generate_wheat

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_FORMAT = 2
EXIT_CONFIG = 3


def _exit_for(exc: ChaffmillError) -> int:
    if isinstance(exc, FormatError):
        return EXIT_FORMAT
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_FORMAT


def _bail(exc: ChaffmillError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(_exit_for(exc))


def _load_key(key_hex: str | None, keyfile: str | None) -> SecretKey:
    if (key_hex is None) == (keyfile is None):
        raise ConfigError("provide exactly one of --key / --keyfile")
    if keyfile is not None:
        try:
            key_hex = Path(keyfile).read_text(encoding="ascii")
        except OSError as exc:
            raise ConfigError(f"cannot read keyfile: {exc}") from exc
    try:
        return SecretKey.from_hex(key_hex)
    except ValueError as exc:
        raise ConfigError(f"bad key: {exc}") from exc


def _load_pipeline_config(path: str | None) -> PipelineConfig:
    return load_config(path) if path else example_config()


def build_stream(config: PipelineConfig):
    """Generators -> agent_emit -> collect, per the configuration."""
    batches = []
    for agent in config.agents:
        generate = generate_wheat if agent.kind == "real" else generate_chaff_content
        records = generate(config.model, agent.records, agent.content_seed)
        cfg = next(c for c in config.agent_configs() if c.agent_id == agent.agent_id)
        batches.append(agent_emit(cfg, records, epoch=config.epoch))
    return collect(batches, shuffle_seed=config.shuffle_seed)


@click.group()
@click.version_option(package_name="chaffmill")
def main() -> None:
    """Chaff-obfuscated log analytics pipeline."""


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def keygen(out_path: str) -> None:
    """Generate a fresh 32-byte key, hex-encoded, into a 0600 file."""
    key = generate_key()
    try:
        fd = os.open(out_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as fh:
            fh.write(key.hex() + "\n")
    except OSError as exc:
        _bail(ConfigError(f"cannot write key: {exc}"))
    click.echo(f"wrote key to {out_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def emit(config_path: str | None, out_path: str) -> None:
    """Consumer side: generate, tag, interleave, and write the stream file."""
    try:
        config = _load_pipeline_config(config_path)
        stream = build_stream(config)
        Path(out_path).write_bytes(dumps_stream(stream))
    except OSError as exc:
        _bail(ConfigError(f"cannot write stream: {exc}"))
    except ChaffmillError as exc:
        _bail(exc)
    click.echo(f"wrote {len(stream.records)} records to {out_path}")


@main.command()
@click.option("--job", "job_name", required=True, type=click.Choice(JOB_NAMES))
@click.option("--stream", "stream_path", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", default=1, show_default=True)
@click.option("--gap", "session_gap", default=1800, show_default=True,
              help="Session gap seconds (session_stats).")
@click.option("--top-k", default=10, show_default=True, help="Top-K terms (trending_terms).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def run(job_name: str, stream_path: str, workers: int, session_gap: int, top_k: int,
        out_path: str) -> None:
    """Provider side: run one analytics job over a stream file.

    Takes no key material by design; it cannot tell wheat from chaff.
    """
    try:
        job = JobSpec(name=job_name, session_gap=session_gap, top_k=top_k)
        with open(stream_path, "rb") as fh:
            stream = deserialize_stream(fh)
        output = run_job(job, stream, workers=workers)
        Path(out_path).write_bytes(dumps_output(output))
    except ValueError as exc:
        _bail(ConfigError(str(exc)))
    except OSError as exc:
        _bail(ConfigError(f"i/o failure: {exc}"))
    except ChaffmillError as exc:
        _bail(exc)
    click.echo(f"wrote {len(output.rows)} rows to {out_path}")


@main.command()
@click.option("--key", "key_hex", default=None, help="Shared key as 64 hex digits.")
@click.option("--keyfile", default=None, type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(["results", "records"]), default="results",
              show_default=True,
              help="results: winnow a job-output file; records: winnow a stream file.")
@click.option("--in", "in_path", required=True, type=click.Path(dir_okay=False),
              help="Job-output file (results mode) or stream file (records mode).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--top-k", default=10, show_default=True,
              help="Top-K re-ranking after merge (trending_terms results).")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="Pipeline config; enables chaff-ratio bookkeeping in the metrics.")
@click.option("--metrics", "metrics_path", default=None, type=click.Path(dir_okay=False))
def winnow(key_hex: str | None, keyfile: str | None, mode: str, in_path: str, out_path: str,
           top_k: int, config_path: str | None, metrics_path: str | None) -> None:
    """Consumer side: drop everything that fails verification under the key."""
    try:
        key = _load_key(key_hex, keyfile)
        if mode == "records":
            with open(in_path, "rb") as fh:
                stream = deserialize_stream(fh)
            winnowed = winnow_stream(key, stream)
            Path(out_path).write_bytes(dumps_stream(winnowed))
            click.echo(f"kept {len(winnowed.records)} of {len(stream.records)} records")
            sys.exit(EXIT_OK if winnowed.records else EXIT_VERIFY)

        with open(in_path, "rb") as fh:
            output = deserialize_output(fh)
        if output.job.name == "trending_terms":
            output = _with_top_k(output, top_k)
        clean = winnow_results(key, output)
        Path(out_path).write_bytes(dumps_clean(clean))

        kinds: dict[str, str] = {}
        counts: dict[str, int] = {}
        if config_path:
            config = load_config(config_path)
            kinds = config.kinds()
            counts = {a.agent_id: a.records for a in config.agents}
        metrics = report_metrics(clean, output, kinds, counts)
        if metrics_path:
            Path(metrics_path).write_text(metrics.to_text(), encoding="utf-8")
        else:
            click.echo(metrics.to_text(), nl=False)
    except OSError as exc:
        _bail(ConfigError(f"i/o failure: {exc}"))
    except ChaffmillError as exc:
        _bail(exc)
    click.echo(
        f"verified agents: {len(clean.verified_agent_ids)}, "
        f"dropped: {len(clean.dropped_agent_ids)}"
    )
    sys.exit(EXIT_OK if clean.verified_agent_ids else EXIT_VERIFY)


def _with_top_k(output, top_k: int):
    from dataclasses import replace

    return replace(output, job=replace(output.job, top_k=top_k))


@main.command("eval")
@click.argument("mode", type=click.Choice(["privacy", "overhead"]))
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="Traffic model source; defaults to the built-in example model.")
@click.option("--records", default=10000, show_default=True,
              help="Records per side (privacy mode).")
@click.option("--agents-per-side", default=4, show_default=True)
@click.option("--job", "job_name", default="page_hits", type=click.Choice(JOB_NAMES),
              show_default=True, help="Job to time (overhead mode).")
@click.option("--wheat", default=50000, show_default=True,
              help="Wheat records (overhead mode).")
@click.option("--ratios", default="0,1,2,4", show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--table", "table_path", default=None, type=click.Path(dir_okay=False))
def eval_cmd(mode: str, config_path: str | None, records: int, agents_per_side: int,
             job_name: str, wheat: int, ratios: str, workers: int, seed: int,
             out_path: str, table_path: str | None) -> None:
    """Run the privacy distinguisher battery or the chaff-overhead timing."""
    try:
        model = _load_pipeline_config(config_path).model
        if mode == "privacy":
            reports = adversary.privacy_experiments(
                model, records_per_side=records, agents_per_side=agents_per_side, seed=seed
            )
            text = "".join(reports[k].to_text() for k in ("null", "mimicked", "broken"))
            table = reports["null"].to_table()
            for k in ("mimicked", "broken"):
                table += "".join(reports[k].to_table().splitlines(keepends=True)[1:])
            Path(out_path).write_text(text, encoding="utf-8")
            if table_path:
                Path(table_path).write_text(table, encoding="utf-8")
            else:
                click.echo(table, nl=False)
            failures = _privacy_failures(reports)
            for failure in failures:
                click.echo(f"FAIL: {failure}", err=True)
            sys.exit(EXIT_VERIFY if failures else EXIT_OK)

        ratio_list = [float(r) for r in ratios.split(",") if r.strip()]
        report = adversary.run_overhead(
            JobSpec(name=job_name), wheat, ratio_list, workers=workers, seed=seed, model=model
        )
        Path(out_path).write_text(report.to_text(), encoding="utf-8")
        if table_path:
            Path(table_path).write_text(report.to_table(), encoding="utf-8")
        else:
            click.echo(report.to_table(), nl=False)
    except ValueError as exc:
        _bail(ConfigError(str(exc)))
    except OSError as exc:
        _bail(ConfigError(f"i/o failure: {exc}"))
    except ChaffmillError as exc:
        _bail(exc)


def _privacy_failures(reports) -> list[str]:
    failures = []
    for result in reports["null"].results:
        if not result.within_null_band():
            failures.append(
                f"null calibration: {result.name} advantage {result.advantage:.4f} "
                "outside the 99% band"
            )
    for result in reports["mimicked"].results:
        if result.advantage > 0.05:
            failures.append(
                f"mimicked chaff: {result.name} advantage {result.advantage:.4f} > 0.05"
            )
        elif result.p_value < 0.01:
            failures.append(
                f"mimicked chaff: {result.name} rejects the coin-flip null (p={result.p_value:.4f})"
            )
    if reports["broken"].max_advantage() < 0.3:
        failures.append(
            f"positive control: best advantage {reports['broken'].max_advantage():.4f} < 0.3, "
            "the battery has no power"
        )
    return failures


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
@click.option("--workers", default=1, show_default=True)
@click.option("--workdir", default=None, type=click.Path(file_okay=False),
              help="Keep intermediate files here instead of a temp directory.")
@click.option("--corrupt-offset", default=None, type=int, hidden=True,
              help="Testing aid: rotate the hex digit at this stream-file byte offset.")
def e2e(config_path: str | None, workers: int, workdir: str | None,
        corrupt_offset: int | None) -> None:
    """Full cycle: emit, run every configured job, winnow, compare to wheat-only.

    The comparison target is the same pipeline re-run without fake agents;
    byte-equal clean outputs mean the chaff provably washed out.
    """
    try:
        config = _load_pipeline_config(config_path)
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(workdir) if workdir else Path(tmp)
            base.mkdir(parents=True, exist_ok=True)
            mismatches = _run_e2e(config, base, workers, corrupt_offset)
    except OSError as exc:
        _bail(ConfigError(f"i/o failure: {exc}"))
    except ChaffmillError as exc:
        _bail(exc)
    sys.exit(EXIT_VERIFY if mismatches else EXIT_OK)


def _rotate_hex_digit(data: bytearray, offset: int) -> None:
    if not 0 <= offset < len(data):
        raise ConfigError(f"--corrupt-offset {offset}: outside the stream file")
    alphabet = b"0123456789abcdef"
    index = alphabet.find(data[offset])
    if index < 0:
        raise ConfigError(f"--corrupt-offset {offset}: byte is not a lowercase hex digit")
    data[offset] = alphabet[(index + 1) % 16]


def _run_e2e(config: PipelineConfig, base: Path, workers: int,
             corrupt_offset: int | None) -> list[str]:
    stream_path = base / "stream.cw"
    stream_bytes = dumps_stream(build_stream(config))
    if corrupt_offset is not None:
        mutable = bytearray(stream_bytes)
        _rotate_hex_digit(mutable, corrupt_offset)
        stream_bytes = bytes(mutable)
    stream_path.write_bytes(stream_bytes)

    oracle_stream = build_stream(config.wheat_only())

    mismatches: list[str] = []
    with open(stream_path, "rb") as fh:
        stream = deserialize_stream(fh)
    for job in config.jobs:
        output = run_job(job, stream, workers=workers)
        (base / f"output-{job.name}.cw").write_bytes(dumps_output(output))
        clean = winnow_results(config.shared_key, output)
        clean_bytes = dumps_clean(clean)
        (base / f"clean-{job.name}.cw").write_bytes(clean_bytes)

        oracle_output = run_job(job, oracle_stream, workers=workers)
        oracle_clean_bytes = dumps_clean(winnow_results(config.shared_key, oracle_output))
        (base / f"oracle-{job.name}.cw").write_bytes(oracle_clean_bytes)

        if clean_bytes == oracle_clean_bytes:
            click.echo(f"{job.name}: OK ({len(clean.rows)} rows match the wheat-only run)")
        else:
            mismatches.append(job.name)
            click.echo(f"{job.name}: MISMATCH", err=True)
            diff = difflib.unified_diff(
                oracle_clean_bytes.decode("utf-8", "replace").splitlines(),
                clean_bytes.decode("utf-8", "replace").splitlines(),
                fromfile=f"wheat-only/{job.name}",
                tofile=f"chaffed/{job.name}",
                lineterm="",
            )
            for line in list(diff)[:40]:
                click.echo(line, err=True)
    return mismatches


if __name__ == "__main__":
    main()
