"""The virtual one-directional token tape.

Every session is serialized onto a single append-only tape: the system
prompt, user text chunks, moments of silence, machine text, and control
tokens, in causal order under a non-decreasing virtual clock. The tape is
the predictor's entire world: `render_view` flattens it into the text the
predictor conditions on.

`next_trigger` implements the engine's dispatch rule: a pending speak
control outranks a freshly arrived chunk, which outranks a motor
completion; ties within a kind go to the earliest arrival.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Iterable

from .fsm import (
    INITIAL_STATE,
    ControlToken,
    FsmState,
    apply_control,
    parse_control,
)

__all__ = [
    "EntrySource",
    "TapeEntry",
    "Tape",
    "EventKind",
    "EngineEvent",
    "CausalityViolation",
    "TapeFormatError",
    "current_state",
    "USER_MARKER",
    "next_trigger",
    "render_view",
    "dump_tape",
    "load_tape",
]

USER_MARKER = "<usr>"


class EntrySource(enum.Enum):
    SYSTEM_PROMPT = "system_prompt"
    USER_CHUNK = "user_chunk"
    SILENCE_CHUNK = "silence_chunk"
    MACHINE_TEXT = "machine_text"
    CONTROL = "control"


class CausalityViolation(Exception):
    """An append would move the tape's virtual clock backwards."""


class TapeFormatError(Exception):
    """A tape record violates the entry schema or tape invariants."""


@dataclass
class TapeEntry:
    index: int
    t_ms: int
    source: EntrySource
    payload: str
    voiced: bool = False  # meaningful only for MACHINE_TEXT

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "t_ms": self.t_ms,
            "source": self.source.value,
            "payload": self.payload,
            "voiced": self.voiced,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TapeEntry":
        try:
            return cls(
                index=int(rec["index"]),
                t_ms=int(rec["t_ms"]),
                source=EntrySource(rec["source"]),
                payload=str(rec["payload"]),
                voiced=bool(rec.get("voiced", False)),
            )
        except (KeyError, ValueError) as exc:
            raise TapeFormatError(f"bad tape record {rec!r}: {exc}") from exc


class EventKind(enum.IntEnum):
    """Engine trigger kinds; smaller value = higher priority."""

    CONTROL_SPEAK_PENDING = 0
    CHUNK_ARRIVED = 1
    TOKEN_VOICED = 2


@dataclass(frozen=True)
class EngineEvent:
    kind: EventKind
    seq: int = 0  # arrival order, breaks ties within a kind (FIFO)
    payload: object | None = None


class Tape:
    """Append-only event record with a cached fold of the control entries.

    Single-writer: only the owning engine mutates a tape; read-only
    snapshots may be shared freely.
    """

    def __init__(self, system_prompt: str, t_ms: int = 0):
        self.entries: list[TapeEntry] = [
            TapeEntry(0, t_ms, EntrySource.SYSTEM_PROMPT, system_prompt)
        ]
        self._state = INITIAL_STATE

    @property
    def state(self) -> FsmState:
        return self._state

    @property
    def last(self) -> TapeEntry:
        return self.entries[-1]

    def append(self, source: EntrySource, payload: str, t_ms: int) -> TapeEntry:
        """Append one entry at virtual time ``t_ms``.

        Raises:
            CausalityViolation: ``t_ms`` precedes the last entry's time.
            InvalidTransition: a CONTROL payload illegal in the current state.
            TapeFormatError: payload violates the per-source shape rules.
        """
        if t_ms < self.last.t_ms:
            raise CausalityViolation(
                f"append at t={t_ms}ms behind tape head t={self.last.t_ms}ms"
            )
        if source is EntrySource.SYSTEM_PROMPT:
            raise TapeFormatError("system prompt exists only at index 0")
        if source is EntrySource.SILENCE_CHUNK and payload:
            raise TapeFormatError("silence entries carry no payload")
        if source is EntrySource.USER_CHUNK and (
            not payload.startswith(USER_MARKER) or payload == USER_MARKER
        ):
            raise TapeFormatError(f"user chunk payload must be '{USER_MARKER}<text>'")
        if source is EntrySource.CONTROL:
            parsed = parse_control(payload)
            if parsed is None or parsed[1]:
                raise TapeFormatError(f"not a control surface string: {payload!r}")
            self._state = apply_control(self._state, parsed[0])
        entry = TapeEntry(len(self.entries), t_ms, source, payload)
        self.entries.append(entry)
        return entry

    def append_control(self, token: ControlToken, t_ms: int) -> TapeEntry:
        return self.append(EntrySource.CONTROL, token.surface, t_ms)

    def mark_voiced(self, index: int) -> None:
        entry = self.entries[index]
        if entry.source is not EntrySource.MACHINE_TEXT:
            raise TapeFormatError(f"entry {index} is {entry.source.value}, not machine text")
        entry.voiced = True

    def controls(self) -> list[ControlToken]:
        out = []
        for entry in self.entries:
            if entry.source is EntrySource.CONTROL:
                parsed = parse_control(entry.payload)
                assert parsed is not None
                out.append(parsed[0])
        return out

    def __len__(self) -> int:
        return len(self.entries)


def current_state(tape: Tape) -> FsmState:
    """Recompute the state as the fold of all control entries from LISTEN.

    Always equals the cached ``tape.state``; exists as the independent
    route for the cache-consistency property.
    """
    state = INITIAL_STATE
    for token in tape.controls():
        state = apply_control(state, token)
    return state


def next_trigger(pending: Iterable[EngineEvent], tape: Tape) -> EngineEvent | None:
    """Select the next decode trigger from ``pending``.

    Highest priority kind wins; within a kind the earliest arrival (lowest
    seq) wins. An empty set yields None and the engine idles. A pending
    speak control is only coherent when the tape's last entry is that
    control, so that is enforced here.
    """
    events = list(pending)
    if not events:
        return None
    if any(e.kind is EventKind.CONTROL_SPEAK_PENDING for e in events):
        last = tape.last
        ok = last.source is EntrySource.CONTROL and last.payload in (
            ControlToken.S_SPEAK.surface,
            ControlToken.C_SPEAK.surface,
        )
        if not ok:
            raise ValueError(
                "control-speak trigger pending but the tape head is "
                f"{last.source.value} {last.payload!r}"
            )
    return min(events, key=lambda e: (e.kind, e.seq))


def render_stream(tape: Tape) -> str:
    """The dialogue token stream without the system prompt.

    User chunk text with the user marker stripped, control tokens as their
    bracketed surface strings, machine text verbatim, all space-joined in
    tape order. Silence entries render as nothing; their effect is visible
    as the control token the predictor emitted after them.
    """
    parts: list[str] = []
    for entry in tape.entries[1:]:
        if entry.source is EntrySource.USER_CHUNK:
            parts.append(entry.payload[len(USER_MARKER):])
        elif entry.source is EntrySource.CONTROL:
            parts.append(entry.payload)
        elif entry.source is EntrySource.MACHINE_TEXT:
            parts.append(entry.payload)
    return " ".join(p for p in parts if p)


def render_view(tape: Tape) -> str:
    """Serialize the tape into the text the predictor conditions on:
    the system prompt first, then the dialogue stream."""
    if not tape.entries:
        raise TapeFormatError("empty tape")
    stream = render_stream(tape)
    prompt = tape.entries[0].payload
    if not stream:
        return prompt
    return f"{prompt}\n\n{stream}"


def dump_tape(tape: Tape, fp: IO[str]) -> None:
    """Write one JSON record per line: index, t_ms, source, payload, voiced."""
    for entry in tape.entries:
        fp.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")


def load_tape(fp: IO[str]) -> Tape:
    """Rebuild a tape from its line-delimited dump, revalidating invariants."""
    entries = []
    for lineno, line in enumerate(fp, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TapeFormatError(f"line {lineno}: not a JSON record: {exc}") from exc
        entries.append(TapeEntry.from_record(rec))
    if not entries or entries[0].source is not EntrySource.SYSTEM_PROMPT:
        raise TapeFormatError("tape must start with a system prompt entry")
    tape = Tape(entries[0].payload, entries[0].t_ms)
    for entry in entries[1:]:
        rebuilt = tape.append(entry.source, entry.payload, entry.t_ms)
        if rebuilt.index != entry.index:
            raise TapeFormatError(
                f"non-contiguous index {entry.index} (expected {rebuilt.index})"
            )
        if entry.voiced:
            tape.mark_voiced(rebuilt.index)
    return tape
