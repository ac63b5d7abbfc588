"""Session orchestrator.

One engine owns one tape and exchanges messages with the three backends.
Every decode step is triggered by exactly one event, dispatched in strict
priority order (pending speak control, then a fresh chunk, then a motor
completion; FIFO within a kind). Chunks are gated by the current state:
while speaking, silence is dropped and text still gets through (that is
what makes barge-in possible); while listening, silence is recorded so the
predictor can condition on it.

Time is integer milliseconds from a clock the runner owns: virtual in
simulation, wall in live sessions. One decode runs at a time and costs the
output's declared decode time, so a chunk arriving mid-decode takes effect
at the next token boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .backends.base import (
    Chunk,
    MotorMode,
    OutputKind,
    PerceptionMode,
    PredictorOutput,
    VoicedReport,
)
from .backends.scripted import SimulatedMotor, SimulatedPerception, UtteranceRecord
from .fsm import ControlToken, FsmState, InvalidTransition
from .tape import EngineEvent, EntrySource, EventKind, Tape, USER_MARKER, next_trigger, render_view

__all__ = [
    "EngineConfig",
    "SessionTimeout",
    "InterruptionKind",
    "SessionTranscript",
    "Engine",
    "run_session",
    "classify_interruption",
]

DEFAULT_SYSTEM_PROMPT = "You are an intelligent voice assistant."


class SessionTimeout(Exception):
    """The virtual clock passed the configured guard without quiescing."""


@dataclass
class EngineConfig:
    chunk_period_ms: int = 640
    force_speak_on_vad: bool = False
    vad_endpoint_ms: int = 700
    max_virtual_ms: int = 600_000
    system_prompt: str = DEFAULT_SYSTEM_PROMPT

    def __post_init__(self):
        if self.chunk_period_ms <= 0:
            raise ValueError("chunk period must be positive")
        if self.vad_endpoint_ms < 0 or self.max_virtual_ms <= 0:
            raise ValueError("durations must be non-negative")


class InterruptionKind(enum.Enum):
    NONE = "none"
    MACHINE_MID = "machine_mid"
    MACHINE_END = "machine_end"
    USER_INTERRUPT = "user_interrupt"


@dataclass
class SessionTranscript:
    tape: Tape
    events: list[tuple[int, str, str]]
    utterances: list[UtteranceRecord]
    voice_spans: list[tuple[int, int, int]]  # (entry_index, start_ms, end_ms)
    speak_control_times: list[int]
    ended_at_ms: int
    vad_endpoint_ms: int
    protocol_violation: str | None = None
    interruption: InterruptionKind = InterruptionKind.NONE
    fted_ms: int | None = None

    def event_log_lines(self) -> list[str]:
        return [f"{t} {kind} {detail}" for t, kind, detail in self.events]


# Processing ranks for occurrences due at the same instant: the recognizer
# endpoint resolves first, then the landing decode, then the periodic
# chunk, then motor completions.
_RANK_ENDPOINT = 0
_RANK_DECODE = 1
_RANK_CHUNK = 2
_RANK_MOTOR = 3


class Engine:
    """Single-writer orchestrator around one tape."""

    def __init__(self, config: EngineConfig, predictor, perception, motor: SimulatedMotor):
        self.config = config
        self.predictor = predictor
        self.perception = perception
        self.motor = motor
        self.tape = Tape(config.system_prompt)
        self.now_ms = 0
        self.events: list[tuple[int, str, str]] = []
        self.pending: list[EngineEvent] = []
        self.protocol_violation: str | None = None
        self.speak_control_times: list[int] = []
        self._seq = 0
        self._decode: tuple[int, PredictorOutput, EventKind, EntrySource] | None = None
        self._deferred_endpoint: Chunk | None = None
        self._halt = False

    # -- wiring helpers --------------------------------------------------------

    def tape_reader(self):
        return lambda: self.tape

    def preload(self, items: list[tuple[EntrySource, str, bool]]) -> None:
        """Seed dialogue history onto the tape at t=0, before the run starts."""
        if self.now_ms != 0 or len(self.tape) > 1:
            raise RuntimeError("history can only be preloaded onto a fresh session")
        for source, payload, voiced in items:
            entry = self.tape.append(source, payload, 0)
            if voiced:
                self.tape.mark_voiced(entry.index)

    def log(self, kind: str, detail: str = "") -> None:
        self.events.append((self.now_ms, kind, detail))

    def _push(self, kind: EventKind, payload=None) -> None:
        self._seq += 1
        self.pending.append(EngineEvent(kind, seq=self._seq, payload=payload))

    # -- chunk path --------------------------------------------------------------

    def on_chunk(self, chunk: Chunk) -> None:
        """Gate one perception event by the current state."""
        if chunk.final and chunk.text is None:
            # Recognizer endpoint marker (semi-streaming): no tape entry.
            self._on_endpoint()
            return
        if chunk.final and self.perception_mode() is PerceptionMode.NON_STREAMING:
            self.tape.append(EntrySource.USER_CHUNK, USER_MARKER + chunk.text, self.now_ms)
            self.log("chunk_text", chunk.text)
            self._push(EventKind.CHUNK_ARRIVED)
            self._on_endpoint()
            return
        if chunk.text is not None:
            self.tape.append(EntrySource.USER_CHUNK, USER_MARKER + chunk.text, self.now_ms)
            self.log("chunk_text", chunk.text)
            self._push(EventKind.CHUNK_ARRIVED)
        elif self.tape.state is FsmState.LISTEN:
            self.tape.append(EntrySource.SILENCE_CHUNK, "", self.now_ms)
            self.log("chunk_silence", "")
            self._push(EventKind.CHUNK_ARRIVED)
        else:
            self.log("chunk_dropped", "silence while speaking")

    def perception_mode(self) -> PerceptionMode:
        return getattr(self.perception, "mode", PerceptionMode.STREAMING)

    def _on_endpoint(self) -> None:
        """The recognizer declared the utterance over; optionally force the floor."""
        self.log("vad_endpoint", "")
        if not self.config.force_speak_on_vad:
            return
        if self.tape.state is not FsmState.LISTEN:
            return
        records = getattr(self.perception, "records", [])
        since = records[-1].start_ms if records else 0
        if any(t >= since for t in self.speak_control_times):
            # The predictor already took the floor for this utterance.
            return
        self._append_control(ControlToken.S_SPEAK, injected=True)

    # -- decode path ----------------------------------------------------------------

    def _dispatch(self) -> None:
        if self._decode is not None or self._halt:
            return
        trig = next_trigger(self.pending, self.tape)
        if trig is None:
            return
        self.pending.remove(trig)
        self.log(
            "dispatch",
            f"trigger={trig.kind.name.lower()} "
            f"pending={','.join(e.kind.name.lower() for e in self.pending) or '-'}",
        )
        head = self.tape.last.source
        output = self.predictor.next(render_view(self.tape))
        self._decode = (self.now_ms + output.decode_cost_ms, output, trig.kind, head)

    def _append_control(self, token: ControlToken, injected: bool = False) -> None:
        self.tape.append_control(token, self.now_ms)
        self.log("control", token.surface + (" injected" if injected else ""))
        if token is ControlToken.S_SPEAK:
            self.speak_control_times.append(self.now_ms)
            self.motor.begin_utterance(self.now_ms)
        if token in (ControlToken.S_SPEAK, ControlToken.C_SPEAK):
            self._push(EventKind.CONTROL_SPEAK_PENDING)
        self.motor.set_speaking(self.tape.state is FsmState.SPEAK)

    def on_decode(
        self,
        output: PredictorOutput,
        trigger: EventKind,
        dispatch_head: EntrySource | None = None,
    ) -> None:
        if output.kind is OutputKind.CONTROL:
            token = output.payload
            try:
                self._append_control(token)
            except InvalidTransition as exc:
                self.protocol_violation = str(exc)
                self.log("protocol_violation", str(exc))
                self._halt = True
                return
            if token is ControlToken.S_LISTEN:
                # A concession answers a user chunk the predictor actually
                # saw (the tape head when this decode was dispatched) and
                # abandons the unvoiced remainder. A natural reply end
                # instead lets the reply finish: buffered non-streaming
                # text is sealed for synthesis, queued streaming tokens
                # drain on their own.
                if dispatch_head is EntrySource.USER_CHUNK:
                    discarded = self.motor.cancel(self.now_ms)
                    self.log("cancel", f"discarded={discarded}")
                elif self.motor.pending_seal():
                    self.motor.seal(self.now_ms)
                    self.log("seal", "")
            return
        entry = self.tape.append(EntrySource.MACHINE_TEXT, output.payload, self.now_ms)
        self.log("text", f"entry={entry.index} {output.payload}")
        if self.tape.state is FsmState.SPEAK:
            self.motor.enqueue(entry.index, output.payload, self.now_ms)
            if self.motor.mode is MotorMode.NON_STREAMING:
                # Buffered tokens are processed on acceptance; voicing
                # completions pace decoding only in streaming mode.
                self._push(EventKind.TOKEN_VOICED)

    def on_voiced(self, report: VoicedReport) -> None:
        self.tape.mark_voiced(report.entry_index)
        span = next(
            s for s in self.motor.spans if s.entry_index == report.entry_index
        )
        self.log("voiced", f"entry={report.entry_index} start={span.start_ms} end={span.end_ms}")
        if self.motor.mode is MotorMode.STREAMING:
            self._push(EventKind.TOKEN_VOICED)

    # -- the loop ------------------------------------------------------------------

    def quiescent(self) -> bool:
        return (
            self._decode is None
            and not self.pending
            and self.perception.next_event_ms() is None
            and self.motor.next_event_ms() is None
        )

    def advance(self, until_ms: int | None = None) -> bool:
        """Process the next due occurrence; False when none is due.

        With ``until_ms`` only occurrences at or before that instant are
        processed, which is how a live runner drains the engine up to the
        wall clock.
        """
        if self._halt:
            return False
        self._dispatch()
        candidates: list[tuple[int, int]] = []
        pt = self.perception.next_event_ms()
        if pt is not None:
            rank = _RANK_ENDPOINT if self.perception.next_is_endpoint() else _RANK_CHUNK
            candidates.append((pt, rank))
        if self._decode is not None:
            candidates.append((self._decode[0], _RANK_DECODE))
        mt = self.motor.next_event_ms()
        if mt is not None:
            candidates.append((mt, _RANK_MOTOR))
        if not candidates:
            return False
        t, rank = min(candidates)
        if until_ms is not None and t > until_ms:
            return False
        if t > self.config.max_virtual_ms:
            raise SessionTimeout(f"no quiescence by t={self.config.max_virtual_ms}ms")
        self.now_ms = max(self.now_ms, t)
        if rank in (_RANK_ENDPOINT, _RANK_CHUNK):
            chunk = self.perception.poll(t)
            if chunk is None:
                pass
            elif rank == _RANK_ENDPOINT and self._decode is not None:
                # Like a chunk, an endpoint takes effect at the next token
                # boundary: the in-flight decode lands first, so a
                # floor-taking the model just decided wins over the
                # injected one.
                self._deferred_endpoint = chunk
            else:
                self.on_chunk(chunk)
        elif rank == _RANK_DECODE:
            _, output, trigger, head = self._decode
            self._decode = None
            self.on_decode(output, trigger, head)
            if self._deferred_endpoint is not None and self._decode is None:
                chunk = self._deferred_endpoint
                self._deferred_endpoint = None
                self.on_chunk(chunk)
        else:
            report = self.motor.poll(t)
            if report is not None:
                self.on_voiced(report)
        return True

    def run(self) -> SessionTranscript:
        while self.advance():
            pass
        self.log("session_end", f"state={self.tape.state.value}")
        return self._transcript()

    def _transcript(self) -> SessionTranscript:
        transcript = SessionTranscript(
            tape=self.tape,
            events=self.events,
            utterances=list(getattr(self.perception, "records", [])),
            voice_spans=[(s.entry_index, s.start_ms, s.end_ms) for s in self.motor.spans],
            speak_control_times=list(self.speak_control_times),
            ended_at_ms=self.now_ms,
            vad_endpoint_ms=self.config.vad_endpoint_ms,
            protocol_violation=self.protocol_violation,
        )
        transcript.interruption = classify_interruption(transcript)
        transcript.fted_ms = _first_token_delay(transcript)
        return transcript


def run_session(config: EngineConfig, predictor, perception, motor) -> SessionTranscript:
    """Drive one session to quiescence on the virtual clock."""
    return Engine(config, predictor, perception, motor).run()


def classify_interruption(transcript: SessionTranscript) -> InterruptionKind:
    """Temporal classification of the machine's floor-taking.

    Mid: the speak control landed strictly before the final word of the
    user's last utterance was (or would have been) delivered. End: at or
    after the final word but before the recognizer endpoint would fire.
    None otherwise, including sessions where the machine never spoke.
    """
    if not transcript.utterances:
        return InterruptionKind.NONE
    last = transcript.utterances[-1]
    speaks = [t for t in transcript.speak_control_times if t >= last.start_ms]
    if not speaks:
        return InterruptionKind.NONE
    t = speaks[0]
    if t < last.scheduled_end_ms:
        return InterruptionKind.MACHINE_MID
    if t < last.delivered_end_ms + transcript.vad_endpoint_ms:
        return InterruptionKind.MACHINE_END
    return InterruptionKind.NONE


def _first_token_delay(transcript: SessionTranscript) -> int | None:
    """Delay from the end of the user's last utterance to the machine's
    first audible output, zero by definition for a mid-utterance interrupt."""
    if not transcript.voice_spans:
        return None
    if transcript.interruption is InterruptionKind.MACHINE_MID:
        return 0
    end = transcript.utterances[-1].delivered_end_ms if transcript.utterances else 0
    onsets = [start for (_e, start, _f) in transcript.voice_spans if start >= end]
    if not onsets:
        return None
    return min(onsets) - end
