"""Discrete-event latency harness over the session engine.

Four pipeline configurations are modelled, ordered by how much of the
stack streams: (1) endpointed recognition, a plain turn-based predictor,
and batch synthesis; (2) semi-streaming recognition whose intermediate
results reach a duplex predictor for interruption checks while a voice
endpoint still owns end-of-speech; (3) fully streaming recognition with a
duplex predictor; (4) streaming recognition, duplex predictor, and
streaming synthesis.

The shipped calibration file is a declared fit: its constants reproduce
the target mean first-voice delays under the closed-form timing model,
they are not measurements of any real recognizer or synthesizer.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .backends.base import (
    MotorMode,
    MotorTimingModel,
    PerceptionMode,
    PerceptionTimingModel,
)
from .backends.scripted import (
    DuplexPolicyPredictor,
    PlainPredictor,
    PolicyScript,
    SimulatedMotor,
    SimulatedPerception,
    UserScript,
    Utterance,
)
from .dataset import BenchmarkSet, CaseKind, Category, DialogueCase, Role, validate
from .engine import Engine, EngineConfig, InterruptionKind, SessionTranscript
from .tape import EntrySource, USER_MARKER

__all__ = [
    "EmptySample",
    "PipelineId",
    "PipelineConfig",
    "SimulationParams",
    "LatencyStats",
    "SimRecord",
    "BenchmarkReport",
    "load_params",
    "default_params",
    "aggregate",
    "simulate",
    "run_benchmark",
    "expected_fted",
    "duplex_system_prompt",
    "plain_system_prompt",
]


class EmptySample(Exception):
    """A statistic was requested over zero samples."""


class PipelineId(enum.IntEnum):
    CONFIG1 = 1
    CONFIG2 = 2
    CONFIG3 = 3
    CONFIG4 = 4


_PIPELINE_SHAPES = {
    PipelineId.CONFIG1: (PerceptionMode.NON_STREAMING, False, MotorMode.NON_STREAMING),
    PipelineId.CONFIG2: (PerceptionMode.SEMI_STREAMING, True, MotorMode.NON_STREAMING),
    PipelineId.CONFIG3: (PerceptionMode.STREAMING, True, MotorMode.NON_STREAMING),
    PipelineId.CONFIG4: (PerceptionMode.STREAMING, True, MotorMode.STREAMING),
}


@dataclass(frozen=True)
class PipelineConfig:
    id: PipelineId
    perception: PerceptionTimingModel
    motor: MotorTimingModel
    duplex_predictor: bool
    force_speak_on_vad: bool
    respond_on_silence: bool
    silence_chunks: int
    duplex_decode_ms: int
    plain_decode_ms: int

    def __post_init__(self):
        want_perception, want_duplex, want_motor = _PIPELINE_SHAPES[self.id]
        if self.perception.mode is not want_perception:
            raise ValueError(f"{self.id.name} requires {want_perception.value} recognition")
        if self.duplex_predictor is not want_duplex:
            raise ValueError(f"{self.id.name} requires duplex_predictor={want_duplex}")
        if self.motor.mode is not want_motor:
            raise ValueError(f"{self.id.name} requires {want_motor.value} synthesis")


@dataclass(frozen=True)
class SimulationParams:
    """One calibration: every timing constant the four pipelines share."""

    chunk_period_ms: int = 640
    speech_rate_wpm: int = 150
    vad_endpoint_ms: int = 700
    finalize_ms: int = 1035
    duplex_decode_ms: int = 75
    plain_decode_ms: int = 190
    stream_setup_ms: int = 550
    stream_per_token_ms: int = 80
    ns_setup_ms: int = 55
    ns_per_token_ms: int = 25
    silence_chunks_before_reply: int = 1
    max_virtual_ms: int = 600_000
    seed: int = 0
    note: str = ""

    def perception_timing(self, mode: PerceptionMode) -> PerceptionTimingModel:
        return PerceptionTimingModel(
            mode=mode,
            chunk_period_ms=self.chunk_period_ms,
            vad_endpoint_ms=self.vad_endpoint_ms,
            finalize_ms=self.finalize_ms,
            speech_rate_wpm=self.speech_rate_wpm,
        )

    def motor_timing(self, mode: MotorMode) -> MotorTimingModel:
        if mode is MotorMode.STREAMING:
            return MotorTimingModel(mode, self.stream_per_token_ms, self.stream_setup_ms)
        return MotorTimingModel(mode, self.ns_per_token_ms, self.ns_setup_ms)

    def pipeline(self, pid: PipelineId | int) -> PipelineConfig:
        pid = PipelineId(pid)
        perception_mode, duplex, motor_mode = _PIPELINE_SHAPES[pid]
        return PipelineConfig(
            id=pid,
            perception=self.perception_timing(perception_mode),
            motor=self.motor_timing(motor_mode),
            duplex_predictor=duplex,
            force_speak_on_vad=pid in (PipelineId.CONFIG1, PipelineId.CONFIG2),
            respond_on_silence=pid in (PipelineId.CONFIG3, PipelineId.CONFIG4),
            silence_chunks=self.silence_chunks_before_reply,
            duplex_decode_ms=self.duplex_decode_ms,
            plain_decode_ms=self.plain_decode_ms,
        )


_PARAM_KEYS = {
    "chunk_period_ms",
    "speech_rate_wpm",
    "vad_endpoint_ms",
    "finalize_ms",
    "duplex_decode_ms",
    "plain_decode_ms",
    "stream_setup_ms",
    "stream_per_token_ms",
    "ns_setup_ms",
    "ns_per_token_ms",
    "silence_chunks_before_reply",
    "max_virtual_ms",
    "seed",
    "note",
}


def load_params(path: str | Path) -> SimulationParams:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("parameter file must hold a JSON object")
    unknown = set(data) - _PARAM_KEYS
    if unknown:
        raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
    return SimulationParams(**data)


def default_params() -> SimulationParams:
    text = resources.files("duplexkit.data").joinpath("calibration.json").read_text("utf-8")
    return SimulationParams(**json.loads(text))


def default_bench_path() -> Path:
    return Path(str(resources.files("duplexkit.data").joinpath("bench_latency.jsonl")))


def duplex_system_prompt() -> str:
    return resources.files("duplexkit.templates").joinpath("system_prompt_duplex.txt").read_text("utf-8")


def plain_system_prompt() -> str:
    return resources.files("duplexkit.templates").joinpath("system_prompt_plain.txt").read_text("utf-8")


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyStats:
    avg_ms: int
    p50_ms: int
    p90_ms: int
    n: int

    def to_record(self) -> dict:
        return {"avg_ms": self.avg_ms, "p50_ms": self.p50_ms, "p90_ms": self.p90_ms, "n": self.n}


def _nearest_rank(ordered: list[int], q: float) -> int:
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def aggregate(latencies_ms: list[int]) -> LatencyStats:
    """Mean (rounded half-up to the millisecond) and nearest-rank percentiles."""
    if not latencies_ms:
        raise EmptySample("no latency samples to aggregate")
    n = len(latencies_ms)
    total = sum(latencies_ms)
    avg = (2 * total + n) // (2 * n)
    ordered = sorted(latencies_ms)
    return LatencyStats(avg, _nearest_rank(ordered, 0.5), _nearest_rank(ordered, 0.9), n)


# ---------------------------------------------------------------------------
# Session assembly
# ---------------------------------------------------------------------------


def _split_case(case: DialogueCase):
    """History turns, streamed turns, per the case kind."""
    if case.kind is CaseKind.MACHINE_INTERRUPTS_USER:
        return case.turns[:-1], case.turns[-1], None
    return case.turns[:-3], case.turns[-3], case.turns[-1]


def _history_items(turns) -> list[tuple[EntrySource, str, bool]]:
    items: list[tuple[EntrySource, str, bool]] = []
    for turn in turns:
        if turn.role is Role.USR:
            items.append((EntrySource.USER_CHUNK, USER_MARKER + turn.visible_text(), False))
        else:
            items.append((EntrySource.CONTROL, "[S.SPEAK]", False))
            items.append((EntrySource.MACHINE_TEXT, turn.visible_text(), True))
            items.append((EntrySource.CONTROL, "[S.LISTEN]", False))
    return items


def build_session(case: DialogueCase, config: PipelineConfig, params: SimulationParams) -> Engine:
    """Wire one engine with scripted backends for this case and pipeline."""
    validate(case)
    ann = case.annotations
    history, question, interruption = _split_case(case)
    silence_chunks = (
        ann.silence_chunks
        if ann is not None and ann.silence_chunks is not None
        else config.silence_chunks
    )

    utterances = [Utterance(question.visible_text(), interruptible=True)]
    replies: list[str] = []
    barge_in = "continue"
    interrupt_after_words = None
    if case.kind is CaseKind.MACHINE_INTERRUPTS_USER:
        if ann is not None and ann.reply:
            replies.append(ann.reply)
        interrupt_after_words = ann.interrupt_after_words if ann else None
    else:
        penultimate = case.turns[-2]
        visible = penultimate.visible_text()
        tail = ann.reply_tail if ann and ann.reply_tail else ""
        replies.append((visible + " " + tail).strip())
        barge_in = "continue" if case.category in (Category.NOISE, Category.AFFIRM) else "concede"
        if barge_in == "concede":
            replies.append(ann.interruption_reply if ann and ann.interruption_reply else "Understood.")
        trigger_words = (
            ann.interrupt_after_voiced_words
            if ann is not None and ann.interrupt_after_voiced_words is not None
            else len(visible.split())
        )
        utterances.append(
            Utterance(
                interruption.visible_text(),
                after_machine_voiced_words=trigger_words,
                interruptible=False,
            )
        )

    trailing = max(
        silence_chunks,
        math.ceil((params.vad_endpoint_ms + params.finalize_ms) / params.chunk_period_ms),
    ) + 2
    engine_config = EngineConfig(
        chunk_period_ms=params.chunk_period_ms,
        force_speak_on_vad=config.force_speak_on_vad,
        vad_endpoint_ms=params.vad_endpoint_ms,
        max_virtual_ms=params.max_virtual_ms,
        system_prompt=duplex_system_prompt() if config.duplex_predictor else plain_system_prompt(),
    )
    motor = SimulatedMotor(config.motor)
    holder: dict[str, Engine] = {}
    perception = SimulatedPerception(
        UserScript(utterances, trailing_silence_chunks=trailing),
        config.perception,
        machine_voiced_words=lambda: motor.voiced_words_at(holder["engine"].now_ms),
        machine_first_onset_ms=motor.first_onset_ms,
    )
    engine = Engine(engine_config, None, perception, motor)
    holder["engine"] = engine
    if config.duplex_predictor:
        engine.predictor = DuplexPolicyPredictor(
            PolicyScript(
                replies=replies,
                interrupt_after_words=interrupt_after_words,
                respond_on_silence=config.respond_on_silence,
                silence_chunks=silence_chunks,
                barge_in=barge_in,
                decode_cost_ms=config.duplex_decode_ms,
            ),
            engine.tape_reader(),
        )
    else:
        engine.predictor = PlainPredictor(
            replies, engine.tape_reader(), decode_cost_ms=config.plain_decode_ms
        )
    engine.preload(_history_items(history))
    return engine


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class SimRecord:
    case_id: str
    kind: CaseKind
    category: Category | None
    config_id: int
    classification: str  # none | machine_mid | machine_end | user_interrupt
    fted_ms: int | None
    interrupt_word: int | None
    response_text: str
    history_text: str
    timing_window: tuple[int, int] | None = None
    keywords: list[str] = field(default_factory=list)
    timing_score: int | None = None
    content_score: int | None = None

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "kind": self.kind.value,
            "category": self.category.value if self.category else None,
            "config_id": self.config_id,
            "classification": self.classification,
            "fted_ms": self.fted_ms,
            "interrupt_word": self.interrupt_word,
            "response_text": self.response_text,
            "history_text": self.history_text,
            "timing_window": list(self.timing_window) if self.timing_window else None,
            "keywords": list(self.keywords),
            "timing_score": self.timing_score,
            "content_score": self.content_score,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SimRecord":
        return cls(
            case_id=rec["case_id"],
            kind=CaseKind(rec["kind"]),
            category=Category(rec["category"]) if rec.get("category") else None,
            config_id=int(rec.get("config_id", 0)),
            classification=rec["classification"],
            fted_ms=rec.get("fted_ms"),
            interrupt_word=rec.get("interrupt_word"),
            response_text=rec.get("response_text", ""),
            history_text=rec.get("history_text", ""),
            timing_window=tuple(rec["timing_window"]) if rec.get("timing_window") else None,
            keywords=list(rec.get("keywords", [])),
            timing_score=rec.get("timing_score"),
            content_score=rec.get("content_score"),
        )


def _delivered_words_before(transcript: SessionTranscript, cutoff_ms: int, start_ms: int) -> int:
    words = 0
    for entry in transcript.tape.entries:
        if entry.source is EntrySource.USER_CHUNK and start_ms < entry.t_ms <= cutoff_ms:
            words += len(entry.payload[len(USER_MARKER):].split())
    return words


def _response_text(transcript: SessionTranscript, case: DialogueCase) -> str:
    """The machine text a judge evaluates: what was audibly said after the
    decisive moment (floor-taking, or the user's barge-in)."""
    tape = transcript.tape
    if case.kind is CaseKind.MACHINE_INTERRUPTS_USER:
        if not transcript.speak_control_times:
            return ""
        t0 = transcript.speak_control_times[-1]
        start_index = next(
            (
                e.index
                for e in tape.entries
                if e.source is EntrySource.CONTROL
                and e.payload == "[S.SPEAK]"
                and e.t_ms == t0
            ),
            None,
        )
    else:
        # Everything audibly voiced from the moment the user began the
        # barge-in, selected by voicing onset rather than tape order.
        barge_start = transcript.utterances[-1].start_ms if transcript.utterances else 0
        chosen = sorted(
            (start, entry) for (entry, start, _end) in transcript.voice_spans
            if start >= barge_start
        )
        words = [tape.entries[entry].payload for _start, entry in chosen]
        return " ".join(words)
    if start_index is None:
        return ""
    words = [
        e.payload
        for e in tape.entries[start_index + 1 :]
        if e.source is EntrySource.MACHINE_TEXT and e.voiced
    ]
    return " ".join(words)


def _history_text(case: DialogueCase, transcript: SessionTranscript, response: str) -> str:
    """Judge-facing rendering: the dialogue as it was actually heard."""
    lines = []
    history, question, interruption = _split_case(case)
    for turn in history:
        speaker = "User" if turn.role is Role.USR else "Machine"
        lines.append(f"{speaker}: {turn.visible_text()}")
    if case.kind is CaseKind.MACHINE_INTERRUPTS_USER:
        heard = transcript.utterances[-1].delivered_words if transcript.utterances else 0
        words = question.visible_text().split()[:heard]
        lines.append("User: " + " ".join(words))
    else:
        lines.append(f"User: {question.visible_text()}")
        lines.append(f"Machine: {case.turns[-2].text}")
        lines.append(f"User: {interruption.visible_text()}")
    if response:
        lines.append(f"Machine: {response}")
    return "\n".join(lines)


def simulate_with_transcript(
    case: DialogueCase, config: PipelineConfig, params: SimulationParams
) -> tuple[SimRecord, SessionTranscript]:
    """Run one case under one pipeline; keep the full session transcript."""
    engine = build_session(case, config, params)
    transcript = engine.run()
    return _distil(case, config, transcript), transcript


def simulate(case: DialogueCase, config: PipelineConfig, params: SimulationParams) -> SimRecord:
    """Run one case under one pipeline and distil the judgeable record."""
    return simulate_with_transcript(case, config, params)[0]


def _distil(
    case: DialogueCase, config: PipelineConfig, transcript: SessionTranscript
) -> SimRecord:
    if case.kind is CaseKind.MACHINE_INTERRUPTS_USER:
        classification = transcript.interruption.value
        speaks = transcript.speak_control_times
        if speaks and transcript.utterances:
            utt = transcript.utterances[-1]
            interrupt_word = _delivered_words_before(transcript, speaks[-1], utt.start_ms)
        else:
            interrupt_word = None
    else:
        classification = InterruptionKind.USER_INTERRUPT.value
        interrupt_word = None
    response = _response_text(transcript, case)
    judge = case.annotations.judge if case.annotations else None
    record = SimRecord(
        case_id=case.id,
        kind=case.kind,
        category=case.category,
        config_id=int(config.id),
        classification=classification,
        fted_ms=transcript.fted_ms,
        interrupt_word=interrupt_word,
        response_text=response,
        history_text=_history_text(case, transcript, response),
        timing_window=judge.timing_window if judge else None,
        keywords=list(judge.keywords) if judge else [],
    )
    return record


@dataclass
class BenchmarkReport:
    config_id: int
    params: SimulationParams
    records: list[SimRecord]
    latency: LatencyStats | None
    interrupt_counts: dict[str, int]

    def to_record(self) -> dict:
        return {
            "note": "latency calibration is a fitted timing model, not a measurement",
            "config_id": self.config_id,
            "seed": self.params.seed,
            "params": {k: getattr(self.params, k) for k in sorted(_PARAM_KEYS) if k != "note"},
            "latency": self.latency.to_record() if self.latency else None,
            "interrupt_counts": self.interrupt_counts,
            "records": [r.to_record() for r in self.records],
        }


def run_benchmark(
    bench: BenchmarkSet,
    config: PipelineConfig,
    params: SimulationParams,
    workers: int = 1,
    transcript_sink=None,
) -> BenchmarkReport:
    """Simulate every case; aggregate delays over cases that produced one.

    ``transcript_sink(case_id, transcript)`` receives every full session
    transcript, e.g. to archive tape dumps for the replay command.
    """
    if not bench.cases:
        raise EmptySample("the benchmark set holds no cases")

    def one(case: DialogueCase) -> SimRecord:
        record, transcript = simulate_with_transcript(case, config, params)
        if transcript_sink is not None:
            transcript_sink(case.id, transcript)
        return record

    if workers <= 1:
        records = [one(case) for case in bench.cases]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, bench.cases))
    latencies = [r.fted_ms for r in records if r.fted_ms is not None]
    counts = {"machine_mid": 0, "machine_end": 0, "none": 0}
    for record in records:
        if record.kind is CaseKind.MACHINE_INTERRUPTS_USER:
            counts[record.classification] += 1
    latency = aggregate(latencies) if latencies else None
    return BenchmarkReport(int(config.id), params, records, latency, counts)


# ---------------------------------------------------------------------------
# Closed-form timing model
# ---------------------------------------------------------------------------


def expected_fted(case: DialogueCase, config: PipelineConfig, params: SimulationParams) -> int | None:
    """Analytic first-voice delay for a machine-interrupt case.

    The documented timing model: per pipeline, the sum of the stages
    between the end of the user's speech and the first audible output.
    Returns 0 for a mid-utterance interrupt and None when the scripted
    machine never takes the floor.
    """
    if case.kind is not CaseKind.MACHINE_INTERRUPTS_USER:
        return None
    ann = case.annotations
    reply_words = len(ann.reply.split()) if ann and ann.reply else 0
    question_words = len(case.turns[-1].visible_text().split())
    P = params.chunk_period_ms
    cw = config.perception.words_per_chunk
    n_chunks = math.ceil(question_words / cw)
    t_end = n_chunks * P
    d = params.duplex_decode_ms
    silence_chunks = (
        ann.silence_chunks if ann and ann.silence_chunks is not None else config.silence_chunks
    )
    want = ann.interrupt_after_words if ann else None

    def ns_tail(seal_ms: int) -> int:
        return seal_ms + params.ns_setup_ms + reply_words * params.ns_per_token_ms

    endpoint = t_end + params.vad_endpoint_ms + params.finalize_ms
    if config.id is PipelineId.CONFIG1:
        if reply_words == 0:
            return None
        return ns_tail(endpoint + params.plain_decode_ms) - t_end

    # Duplex pipelines: find when the speak control lands.
    speak_ms = None
    if want is not None and want <= question_words and reply_words:
        trigger_chunk = math.ceil(want / cw)
        speak_ms = trigger_chunk * P + d
        if speak_ms < t_end:
            return 0
    if speak_ms is None:
        if config.id is PipelineId.CONFIG2:
            if reply_words == 0:
                return None
            # Injection at the endpoint; the decoder may still be finishing
            # the listen step for the chunk just before it.
            last_arrival = t_end
            j = 1
            while t_end + j * P < endpoint:
                last_arrival = t_end + j * P
                j += 1
            first_token = max(endpoint, last_arrival + d) + d
            # Tokens land one decode step apart; the closing control takes
            # one more step and seals the buffer.
            seal = first_token + reply_words * d
            return ns_tail(seal) - t_end
        if not config.respond_on_silence or reply_words == 0:
            return None
        speak_ms = t_end + silence_chunks * P + d

    if config.id is PipelineId.CONFIG4:
        return speak_ms + d + params.stream_setup_ms - t_end
    seal = speak_ms + (reply_words + 1) * d
    return ns_tail(seal) - t_end
