"""Operator entry point.

Every command writes its machine-readable result to a file and prints a
human-readable summary; identical inputs produce byte-identical output
files. Exit code 0 means no error record was produced.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import click

from . import __version__, dataset, metrics
from .backends.base import BackendUnavailable
from .backends.remote import CompletionClient, remote_judge_factory
from .config import ConfigError, resolve_backend_config
from .dataset import CaseKind, Category, ParseError, SchemaError, ValidationError
from .simulator import (
    EmptySample,
    SimRecord,
    SimulationParams,
    aggregate,
    default_params,
    load_params,
    run_benchmark,
)
from .tape import TapeFormatError, load_tape, render_view

TOPIC_POOL = (
    "astronomy cooking gardening travel music history cycling chess tea "
    "architecture photography sailing wildlife languages board games"
).split()


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _make_client(config_path: str | None, **overrides) -> CompletionClient:
    try:
        return CompletionClient(resolve_backend_config(config_path, **overrides))
    except ConfigError as exc:
        raise _fail(str(exc)) from exc


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Full-duplex dialogue simulator, evaluator, and gateway."""


@main.command()
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_id", required=True, type=click.Choice(["1", "2", "3", "4"]))
@click.option("--params", "params_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=None, type=int, help="Recorded in the report header.")
@click.option("--dump-dir", type=click.Path(), default=None,
              help="Archive per-case tape dumps and event logs here.")
def simulate(bench_path, config_id, params_path, out_path, workers, seed, dump_dir):
    """Run one pipeline configuration over a benchmark file."""
    try:
        bench = dataset.load(bench_path)
    except (SchemaError, ValidationError) as exc:
        raise _fail(f"benchmark file rejected: {exc}") from exc
    try:
        params = load_params(params_path) if params_path else default_params()
    except (ValueError, TypeError) as exc:
        raise _fail(f"parameter file rejected: {exc}") from exc
    if seed is not None:
        params = SimulationParams(**{**params.__dict__, "seed": seed})
    sink = None
    if dump_dir is not None:
        dump_root = Path(dump_dir)
        dump_root.mkdir(parents=True, exist_ok=True)

        def sink(case_id, transcript):
            from .tape import dump_tape

            with open(dump_root / f"{case_id}.tape", "w", encoding="utf-8") as fp:
                dump_tape(transcript.tape, fp)
            (dump_root / f"{case_id}.events").write_text(
                "\n".join(transcript.event_log_lines()) + "\n", encoding="utf-8"
            )

    try:
        report = run_benchmark(
            bench, params.pipeline(int(config_id)), params, workers=workers,
            transcript_sink=sink,
        )
    except EmptySample as exc:
        raise _fail(str(exc)) from exc
    _write_json(Path(out_path), report.to_record())
    if report.latency:
        click.echo(
            f"Configuration {config_id}: Avg {report.latency.avg_ms} ms | "
            f"50% {report.latency.p50_ms} ms | 90% {report.latency.p90_ms} ms "
            f"(n={report.latency.n})"
        )
    else:
        click.echo(f"Configuration {config_id}: no latency samples")
    counts = report.interrupt_counts
    click.echo(
        f"interrupts: mid {counts['machine_mid']} | end {counts['machine_end']} | "
        f"none {counts['none']}"
    )
    click.echo(f"report written to {out_path}")


def _load_records(path: Path) -> list[SimRecord]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise _fail(f"records file is not JSON: {exc}") from exc
    records = payload.get("records") if isinstance(payload, dict) else payload
    if not isinstance(records, list):
        raise _fail("records file must hold a report object or a record list")
    return [SimRecord.from_record(rec) for rec in records]


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--judge", "judge_kind", default="rule", type=click.Choice(["rule", "remote"]),
              show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--backend", "backend_path", type=click.Path(exists=True),
              help="Backend config file for the remote judge.")
def evaluate(records_path, judge_kind, out_path, backend_path):
    """Judge simulation records and compute the metric suite."""
    records = _load_records(Path(records_path))
    if not records:
        raise _fail("no records to evaluate")
    audit: dict[str, str] = {}
    if judge_kind == "remote":
        client = _make_client(backend_path)
        judge = remote_judge_factory(client, audit=audit)
    else:
        judge = metrics.rule_judge
    try:
        metrics.judge_records(records, judge)
    except BackendUnavailable as exc:
        raise _fail(f"remote judge unreachable: {exc}") from exc
    except metrics.MissingAnnotation as exc:
        raise _fail(str(exc)) from exc
    latencies = [r.fted_ms for r in records if r.fted_ms is not None]
    try:
        report = metrics.build_report(records, aggregate(latencies) if latencies else None)
    except metrics.UnjudgedMid as exc:
        raise _fail(f"unjudged mid-utterance records: {', '.join(exc.case_ids)}") from exc
    except (metrics.EmptyCategory, EmptySample) as exc:
        raise _fail(str(exc)) from exc
    payload = report.to_record()
    payload["records"] = [r.to_record() for r in records]
    if audit:
        payload["judge_transcripts"] = audit
    _write_json(Path(out_path), payload)
    click.echo(report.render_table())
    click.echo(f"report written to {out_path}")


@main.command()
@click.option("--template", "template_id", required=True,
              type=click.Choice(sorted(dataset.TEMPLATE_FILES)))
@click.option("--params", "params_path", required=True, type=click.Path(exists=True),
              help="JSON file of placeholder values; optional 'topics' list.")
@click.option("--n", "count", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--backend", "backend_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
def generate(template_id, params_path, count, backend_path, out_dir, seed):
    """Render generation prompts and collect raw transcripts."""
    try:
        values = json.loads(Path(params_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise _fail(f"params file is not JSON: {exc}") from exc
    topics = values.pop("topics", None) or TOPIC_POOL
    rng = random.Random(seed)
    client = _make_client(backend_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(count):
        params = dict(values)
        params.setdefault("topic", rng.choice(topics))
        params.setdefault("first_question_topic", params["topic"])
        try:
            prompt = dataset.render_prompt(template_id, params)
        except dataset.MissingPlaceholder as exc:
            raise _fail(str(exc)) from exc
        try:
            text = client.complete(prompt)
        except BackendUnavailable as exc:
            raise _fail(f"completion backend unreachable: {exc}") from exc
        path = out / f"raw_{i:03d}.txt"
        path.write_text(text, encoding="utf-8")
        written.append(str(path))
    click.echo(f"wrote {len(written)} raw transcript file(s) to {out_dir}")


def _normalize_ingested(turns: list[dataset.DialogueTurn], kind: CaseKind) -> None:
    """Sample-table transcripts mark truncation implicitly; make it explicit."""
    if kind is not CaseKind.USER_INTERRUPTS_MACHINE or len(turns) < 2:
        return
    penultimate = turns[-2]
    if penultimate.role is dataset.Role.SYS and not penultimate.not_finished:
        penultimate.text = f"{penultimate.text.rstrip()} {dataset.NOT_FINISHED}"
        penultimate.not_finished = True


@main.command()
@click.option("--raw", "raw_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--kind", "kind_value", type=click.Choice([k.value for k in CaseKind]),
              help="Defaults to user-interrupt when the transcript has an interruption tail.")
@click.option("--category", "category_value", type=click.Choice([c.value for c in Category]))
@click.option("--id-prefix", default="ingest", show_default=True)
def ingest(raw_path, out_path, kind_value, category_value, id_prefix):
    """Parse raw generated transcripts into the benchmark format."""
    raw = Path(raw_path)
    files = sorted(raw.glob("*.txt")) if raw.is_dir() else [raw]
    if not files:
        raise _fail(f"no .txt transcripts under {raw_path}")
    cases = []
    failures = []
    for i, path in enumerate(files):
        try:
            parsed = dataset.parse_transcript(path.read_text(encoding="utf-8"))
        except ParseError as exc:
            failures.append(f"{path}: {exc}")
            continue
        if kind_value:
            kind = CaseKind(kind_value)
        elif parsed.has_user_interruption or (
            len(parsed.turns) >= 2 and parsed.turns[-2].not_finished
        ):
            kind = CaseKind.USER_INTERRUPTS_MACHINE
        else:
            kind = CaseKind.MACHINE_INTERRUPTS_USER
        category = Category(category_value) if category_value else None
        _normalize_ingested(parsed.turns, kind)
        case = dataset.DialogueCase(f"{id_prefix}-{i:03d}", kind, parsed.turns, category)
        try:
            dataset.validate(case)
        except ValidationError as exc:
            failures.append(f"{path}: {exc}")
            continue
        cases.append(case)
    if failures:
        for failure in failures:
            click.echo(failure, err=True)
        raise _fail(f"{len(failures)} transcript(s) failed to ingest")
    dataset.save(cases, out_path)
    click.echo(f"ingested {len(cases)} case(s) into {out_path}")


@main.command()
@click.option("--tape", "tape_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def replay(tape_path, out_path):
    """Re-validate a tape dump and render the predictor's view of it."""
    from .fsm import InvalidTransition
    from .tape import CausalityViolation

    try:
        with open(tape_path, encoding="utf-8") as fp:
            tape = load_tape(fp)
    except (TapeFormatError, CausalityViolation, InvalidTransition) as exc:
        raise _fail(f"tape rejected: {exc}") from exc
    view = render_view(tape)
    _write_json(
        Path(out_path),
        {"entries": len(tape), "final_state": tape.state.value, "view": view},
    )
    click.echo(view)
    click.echo(f"replay written to {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8800, show_default=True, type=int)
@click.option("--backend", "backend_path", type=click.Path(exists=True),
              help="Completion backend for the live predictor.")
@click.option("--chunk-period", default=640, show_default=True, type=int)
@click.option("--session-limit", default=8, show_default=True, type=int)
def serve(host, port, backend_path, chunk_period, session_limit):
    """Launch the live-session gateway."""
    import uvicorn

    from .backends.remote import RemotePredictor
    from .gateway import GatewaySettings, create_app
    from .simulator import duplex_system_prompt

    client = _make_client(backend_path)
    prompt = client.config.system_prompt(duplex_system_prompt())

    def predictor_factory(engine):
        return RemotePredictor(client, prompt, tape_reader=engine.tape_reader())

    app = create_app(
        GatewaySettings(
            predictor_factory=predictor_factory,
            chunk_period_ms=chunk_period,
            session_limit=session_limit,
            system_prompt=prompt,
        )
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
