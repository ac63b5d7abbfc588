"""Deterministic scripted backends for simulation and tests.

All actors here are pure given (script, clock): replaying a session
produces byte-identical chunk, output, and report streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from ..fsm import ControlToken, FsmState
from ..tape import EntrySource, Tape, USER_MARKER
from .base import (
    Chunk,
    EnqueueWhileListening,
    MotorMode,
    MotorTimingModel,
    OutputKind,
    PerceptionMode,
    PerceptionTimingModel,
    PredictorOutput,
    ScriptExhausted,
    VoicedReport,
)

__all__ = [
    "Utterance",
    "UserScript",
    "UtteranceRecord",
    "SimulatedPerception",
    "VoiceSpan",
    "SimulatedMotor",
    "TablePredictor",
    "DuplexPolicyPredictor",
    "PlainPredictor",
]


# ---------------------------------------------------------------------------
# Perception: a scripted user whose speech is chunked onto the period grid.
# ---------------------------------------------------------------------------


@dataclass
class Utterance:
    """One scripted stretch of user speech.

    ``after_machine_voiced_words`` delays the start until the machine has
    audibly produced that many words (how a scripted user barges in).
    ``interruptible`` lets the machine's first audio cut the utterance
    short: the user finishes the chunk being spoken and goes silent.
    """

    text: str
    after_machine_voiced_words: int | None = None
    interruptible: bool = True


@dataclass
class UserScript:
    utterances: list[Utterance]
    trailing_silence_chunks: int = 3


@dataclass
class UtteranceRecord:
    """What actually happened to one utterance during the session."""

    text: str
    start_ms: int
    scheduled_end_ms: int
    delivered_end_ms: int
    delivered_words: int
    total_words: int
    truncated: bool


class SimulatedPerception:
    """Chunk source for a scripted user under one of the recognizer modes.

    Streaming and semi-streaming deliver text/silence every chunk period;
    semi-streaming and non-streaming additionally produce an endpoint event
    (vad_endpoint + finalize after the last delivered word) carrying the
    full utterance text in non-streaming mode and nothing otherwise.
    """

    def __init__(
        self,
        script: UserScript,
        timing: PerceptionTimingModel,
        machine_voiced_words: Callable[[], int] | None = None,
        machine_first_onset_ms: Callable[[], int | None] | None = None,
    ):
        self.script = script
        self.timing = timing
        self._voiced_words = machine_voiced_words or (lambda: 0)
        self._first_onset = machine_first_onset_ms or (lambda: None)

        self._queue = list(script.utterances)
        self._active: Utterance | None = None
        self._active_words: list[str] = []
        self._active_delivered = 0
        self._active_start_ms = 0
        self._next_boundary = timing.chunk_period_ms
        self._trailing_left = script.trailing_silence_chunks
        self._endpoint_at: int | None = None
        self._endpoint_text: str | None = None
        self._done = False
        self.records: list[UtteranceRecord] = []
        if timing.mode is PerceptionMode.NON_STREAMING:
            self._pump_non_streaming()

    # -- inspection ---------------------------------------------------------

    @property
    def mode(self) -> PerceptionMode:
        return self.timing.mode

    def utterance_schedule(self, start_ms: int, text: str) -> tuple[int, int]:
        """(chunks, scheduled delivery end) for an utterance starting at a boundary."""
        words = len(text.split())
        chunks = math.ceil(words / self.timing.words_per_chunk)
        return chunks, start_ms + chunks * self.timing.chunk_period_ms

    def next_event_ms(self) -> int | None:
        candidates = []
        if self._endpoint_at is not None:
            candidates.append(self._endpoint_at)
        if not self._done and self.mode is not PerceptionMode.NON_STREAMING:
            candidates.append(self._next_boundary)
        return min(candidates) if candidates else None

    def next_is_endpoint(self) -> bool:
        nxt = self.next_event_ms()
        return nxt is not None and self._endpoint_at == nxt

    def exhausted(self) -> bool:
        return self._done and self._endpoint_at is None

    # -- event production ----------------------------------------------------

    def poll(self, now_ms: int) -> Chunk | None:
        """Emit the event due at ``now_ms``, endpoint first on a tie."""
        if self._endpoint_at is not None and now_ms >= self._endpoint_at:
            at = self._endpoint_at
            text = self._endpoint_text
            self._endpoint_at = None
            self._endpoint_text = None
            if self.mode is PerceptionMode.NON_STREAMING:
                self._pump_non_streaming()
            return Chunk(at, text=text, final=True)
        if self._done or self.mode is PerceptionMode.NON_STREAMING:
            return None
        if now_ms < self._next_boundary:
            return None
        boundary = self._next_boundary
        self._next_boundary = boundary + self.timing.chunk_period_ms

        self._maybe_start_utterance(boundary)
        if self._active is not None:
            chunk = self._deliver_words(boundary)
            if chunk is not None:
                return chunk
        # Nothing active: a moment of silence, within the trailing budget
        # once the script has nothing further to say.
        if not self._queue and self._active is None:
            if self._trailing_left <= 0:
                self._done = True
                return None
            self._trailing_left -= 1
        return Chunk(boundary, text=None)

    def _pump_non_streaming(self) -> None:
        """Schedule the single recognition result for the next utterance."""
        if self._endpoint_at is not None or not self._queue:
            self._done = not self._queue and self._endpoint_at is None
            return
        utt = self._queue.pop(0)
        start = 0 if not self.records else self.records[-1].delivered_end_ms
        _, end = self.utterance_schedule(start, utt.text)
        words = len(utt.text.split())
        self.records.append(
            UtteranceRecord(utt.text, start, end, end, words, words, truncated=False)
        )
        self._endpoint_at = end + self.timing.vad_endpoint_ms + self.timing.finalize_ms
        self._endpoint_text = utt.text

    def _maybe_start_utterance(self, boundary: int) -> None:
        if self._active is not None or not self._queue:
            return
        nxt = self._queue[0]
        if nxt.after_machine_voiced_words is not None:
            if self._voiced_words() < nxt.after_machine_voiced_words:
                return
        self._queue.pop(0)
        self._active = nxt
        self._active_words = nxt.text.split()
        self._active_delivered = 0
        # Speech occupies the period ending at this boundary onwards.
        self._active_start_ms = boundary - self.timing.chunk_period_ms

    def _truncated(self, boundary: int) -> bool:
        if not self._active.interruptible:
            return False
        onset = self._first_onset()
        if onset is None or onset < self._active_start_ms:
            return False
        # The user finishes the chunk being spoken when the machine's audio
        # starts, then yields: boundaries strictly beyond that carry nothing.
        period = self.timing.chunk_period_ms
        stop_boundary = math.ceil(onset / period) * period
        return boundary > stop_boundary

    def _deliver_words(self, boundary: int) -> Chunk | None:
        assert self._active is not None
        if self._truncated(boundary):
            self._finish_active(boundary, truncated=True)
            return None  # caller emits the silence for this boundary
        take = self.timing.words_per_chunk
        words = self._active_words[self._active_delivered:self._active_delivered + take]
        self._active_delivered += len(words)
        last = self._active_delivered >= len(self._active_words)
        if last:
            self._finish_active(boundary, truncated=False)
        return Chunk(boundary, text=" ".join(words), final=last)

    def _finish_active(self, boundary: int, truncated: bool) -> None:
        utt = self._active
        total = len(self._active_words)
        chunks_full = math.ceil(total / self.timing.words_per_chunk)
        scheduled_end = self._active_start_ms + chunks_full * self.timing.chunk_period_ms
        delivered_end = boundary - self.timing.chunk_period_ms if truncated else boundary
        self.records.append(
            UtteranceRecord(
                utt.text,
                self._active_start_ms,
                scheduled_end,
                delivered_end,
                self._active_delivered,
                total,
                truncated,
            )
        )
        if self.mode is PerceptionMode.SEMI_STREAMING:
            self._endpoint_at = (
                delivered_end + self.timing.vad_endpoint_ms + self.timing.finalize_ms
            )
            self._endpoint_text = None
        self._active = None
        self._active_words = []
        self._active_delivered = 0


# ---------------------------------------------------------------------------
# Motor: voices machine tokens, reporting each completion.
# ---------------------------------------------------------------------------


@dataclass
class VoiceSpan:
    entry_index: int
    start_ms: int
    end_ms: int
    words: int
    reported: bool = False


@dataclass
class _Queued:
    entry_index: int
    words: int
    enqueued_ms: int


class SimulatedMotor:
    """Deterministic voicing timeline under a MotorTimingModel.

    A voicing token is a whitespace-delimited word; an enqueued text unit
    spans as many tokens as it has words and reports once, when its last
    word is out. Streaming mode voices units as they arrive (one-time
    setup when an utterance begins). Non-streaming mode buffers the whole
    reply until ``seal``, spends setup plus one per-word cost synthesizing,
    then plays it back at the per-word rate.
    """

    def __init__(self, timing: MotorTimingModel):
        self.timing = timing
        self.speaking_allowed = False
        self.enqueued_words = 0
        self.discarded_words = 0
        self.enqueued_count = 0
        self.spans: list[VoiceSpan] = []
        self._buffer: list[_Queued] = []  # non-streaming, pre-seal
        self._sealed = True
        self._setup_charged = False
        self._last_end_ms: int | None = None

    @property
    def mode(self) -> MotorMode:
        return self.timing.mode

    # -- lifecycle ------------------------------------------------------------

    def begin_utterance(self, now_ms: int) -> None:
        """Start a fresh voicing run; the next first unit pays setup."""
        self.speaking_allowed = True
        self._setup_charged = False
        self._sealed = self.mode is MotorMode.STREAMING
        self._last_end_ms = None

    def set_speaking(self, allowed: bool) -> None:
        self.speaking_allowed = allowed

    def enqueue(self, entry_index: int, text: str, now_ms: int) -> int:
        """Accept one text unit; returns the acknowledgment time (= now)."""
        if not self.speaking_allowed:
            raise EnqueueWhileListening(
                f"unit {text!r} enqueued at t={now_ms}ms outside the speaking state"
            )
        words = len(text.split())
        self.enqueued_words += words
        self.enqueued_count += 1
        if self.mode is MotorMode.STREAMING:
            self._schedule(entry_index, words, now_ms)
        else:
            self._buffer.append(_Queued(entry_index, words, now_ms))
        return now_ms

    def _schedule(self, entry_index: int, words: int, ready_ms: int) -> None:
        if not self._setup_charged:
            start = ready_ms + self.timing.synthesis_setup_ms
            self._setup_charged = True
        else:
            start = max(ready_ms, self._last_end_ms if self._last_end_ms is not None else ready_ms)
        end = start + words * self.timing.per_token_voicing_ms
        self.spans.append(VoiceSpan(entry_index, start, end, words))
        self._last_end_ms = end

    def seal(self, now_ms: int) -> None:
        """Close the reply buffer and start synthesis (non-streaming only)."""
        if self.mode is not MotorMode.NON_STREAMING or self._sealed:
            return
        self._sealed = True
        total = sum(q.words for q in self._buffer)
        if total == 0:
            self._buffer = []
            return
        v = self.timing.per_token_voicing_ms
        cursor = now_ms + self.timing.synthesis_setup_ms + total * v
        for queued in self._buffer:
            end = cursor + queued.words * v
            self.spans.append(VoiceSpan(queued.entry_index, cursor, end, queued.words))
            cursor = end
        self._buffer = []
        self._last_end_ms = cursor

    def cancel(self, now_ms: int) -> int:
        """Discard everything unvoiced; sound stops at the word boundary.

        The word being voiced completes; unstarted words are dropped.
        Returns the number of discarded words.
        """
        discarded = sum(q.words for q in self._buffer)
        self._buffer = []
        v = self.timing.per_token_voicing_ms
        kept = []
        for span in self.spans:
            if span.reported or span.end_ms <= now_ms:
                kept.append(span)
            elif span.start_ms >= now_ms:
                discarded += span.words
            else:
                # In flight: keep the words out already plus the one in
                # progress, cut the rest.
                done = math.ceil((now_ms - span.start_ms) / v) if v else span.words
                done = min(span.words, max(done, 1))
                discarded += span.words - done
                span.end_ms = span.start_ms + done * v
                span.words = done
                kept.append(span)
        self.spans = kept
        self.discarded_words += discarded
        self._sealed = True
        self._last_end_ms = None
        return discarded

    # -- reporting -------------------------------------------------------------

    def pending_seal(self) -> bool:
        return self.mode is MotorMode.NON_STREAMING and not self._sealed and bool(self._buffer)

    def next_event_ms(self) -> int | None:
        due = [s.end_ms for s in self.spans if not s.reported]
        return min(due) if due else None

    def poll(self, now_ms: int) -> VoicedReport | None:
        due = [s for s in self.spans if not s.reported and s.end_ms <= now_ms]
        if not due:
            return None
        span = min(due, key=lambda s: (s.end_ms, s.start_ms))
        span.reported = True
        return VoicedReport(span.entry_index, span.end_ms)

    # -- accounting --------------------------------------------------------------

    def first_onset_ms(self) -> int | None:
        starts = [s.start_ms for s in self.spans]
        return min(starts) if starts else None

    def voiced_words_at(self, now_ms: int) -> int:
        v = self.timing.per_token_voicing_ms
        done = 0
        for s in self.spans:
            if now_ms >= s.end_ms:
                done += s.words
            elif now_ms > s.start_ms and v:
                done += min(s.words, (now_ms - s.start_ms) // v)
        return done

    def queued_words_at(self, now_ms: int) -> int:
        return self.enqueued_words - self.discarded_words - self.voiced_words_at(now_ms)


# ---------------------------------------------------------------------------
# Predictors.
# ---------------------------------------------------------------------------


class TablePredictor:
    """Fixed output list (optionally keyed by exact view) for unit tests."""

    def __init__(
        self,
        outputs: list[PredictorOutput] | None = None,
        by_view: dict[str, PredictorOutput] | None = None,
    ):
        self._outputs = list(outputs or [])
        self._by_view = dict(by_view or {})

    def next(self, view: str) -> PredictorOutput:
        if view in self._by_view:
            return self._by_view[view]
        if not self._outputs:
            raise ScriptExhausted(f"no scripted output for view ending {view[-60:]!r}")
        return self._outputs.pop(0)


@dataclass
class PolicyScript:
    """Behaviour plan for one session's scripted duplex predictor."""

    replies: list[str] = field(default_factory=list)
    interrupt_after_words: int | None = None
    respond_on_silence: bool = True
    silence_chunks: int = 1
    barge_in: str = "concede"  # "continue" keeps the floor, "concede" yields it
    decode_cost_ms: int = 75


class DuplexPolicyPredictor:
    """Scripted stand-in for a duplex-tuned model.

    Listening: emits the continue-listening control on partial input and the
    speak control once enough words are visible (or after the configured run
    of silence). Speaking: answers barge-in chunks with the keep-speaking or
    concede control per the script, streams reply words one per decode step,
    and closes every reply with the concede control.

    Deterministic replay: behaviour is a function of the session prefix,
    observed through a read-only tape snapshot.
    """

    def __init__(self, script: PolicyScript, tape_reader: Callable[[], Tape]):
        self.script = script
        self._tape = tape_reader
        self._replies = list(script.replies)
        self._current: list[str] | None = None
        self._seen = 0  # tape entries already examined
        self._unanswered_user = 0
        self._unanswered_silence = 0
        self._silence_run = 0
        self._visible_words = 0

    def _ingest(self, tape: Tape) -> None:
        for entry in tape.entries[self._seen:]:
            if entry.source is EntrySource.USER_CHUNK:
                self._unanswered_user += 1
                self._silence_run = 0
                self._visible_words += len(entry.payload[len(USER_MARKER):].split())
            elif entry.source is EntrySource.SILENCE_CHUNK:
                self._unanswered_silence += 1
                self._silence_run += 1
            elif entry.source is EntrySource.CONTROL:
                # Every control on the tape answers whatever arrived before
                # it; taking the floor starts a fresh user segment.
                self._unanswered_user = 0
                self._unanswered_silence = 0
                if entry.payload == ControlToken.S_SPEAK.surface:
                    self._visible_words = 0
                    self._silence_run = 0
        self._seen = len(tape.entries)

    def _start_reply_if_needed(self) -> None:
        if self._current is None:
            self._current = self._replies.pop(0).split() if self._replies else []

    def _out(self, token_or_text) -> PredictorOutput:
        cost = self.script.decode_cost_ms
        if isinstance(token_or_text, ControlToken):
            return PredictorOutput.control(token_or_text, cost)
        return PredictorOutput.text(token_or_text, cost)

    def next(self, view: str) -> PredictorOutput:
        tape = self._tape()
        self._ingest(tape)

        if tape.state is FsmState.SPEAK:
            self._start_reply_if_needed()
            if self._unanswered_user > 0:
                self._unanswered_user -= 1
                if self.script.barge_in == "continue":
                    return self._out(ControlToken.C_SPEAK)
                self._current = None
                return self._out(ControlToken.S_LISTEN)
            self._unanswered_silence = 0  # dropped silences never reach us anyway
            if self._current:
                return self._out(self._current.pop(0))
            self._current = None
            return self._out(ControlToken.S_LISTEN)

        # Listening.
        want = self.script.interrupt_after_words
        if self._unanswered_user > 0:
            self._unanswered_user -= 1
            if want is not None and self._visible_words >= want and self._has_reply():
                return self._speak()
            return self._out(ControlToken.C_LISTEN)
        if self._unanswered_silence > 0:
            self._unanswered_silence -= 1
            if (
                self.script.respond_on_silence
                and self._visible_words > 0
                and self._silence_run >= self.script.silence_chunks
                and self._has_reply()
            ):
                return self._speak()
            return self._out(ControlToken.C_LISTEN)
        return self._out(ControlToken.C_LISTEN)

    def _has_reply(self) -> bool:
        return self._current is not None or bool(self._replies)

    def _speak(self) -> PredictorOutput:
        return self._out(ControlToken.S_SPEAK)


class PlainPredictor:
    """Half-duplex stand-in: never takes the floor of its own accord.

    When an injected speak control forces the floor to it, the whole reply
    comes out as a single text unit (its decode cost standing for the
    model's response latency), closed by a zero-cost concede control.
    """

    def __init__(
        self,
        replies: list[str],
        tape_reader: Callable[[], Tape],
        decode_cost_ms: int = 190,
    ):
        self._replies = list(replies)
        self._tape = tape_reader
        self.decode_cost_ms = decode_cost_ms
        self._reply_out = False

    def next(self, view: str) -> PredictorOutput:
        if self._tape().state is FsmState.SPEAK:
            if not self._reply_out and self._replies:
                self._reply_out = True
                return PredictorOutput.text(self._replies.pop(0), self.decode_cost_ms)
            self._reply_out = False
            return PredictorOutput.control(ControlToken.S_LISTEN, 0)
        return PredictorOutput.control(ControlToken.C_LISTEN, 0)
