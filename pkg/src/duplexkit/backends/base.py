"""Shared types and contracts for the three session peripherals.

A session wires together a predictor (the language model or a scripted
stand-in), a perception source (speech recognition stand-in producing
periodic text/silence chunks), and a motor sink (speech synthesis stand-in
voicing machine tokens). Backends never talk to each other; the engine is
the only party exchanging messages with all three.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from ..fsm import ControlToken

__all__ = [
    "Chunk",
    "VoicedReport",
    "OutputKind",
    "PredictorOutput",
    "PerceptionMode",
    "PerceptionTimingModel",
    "MotorMode",
    "MotorTimingModel",
    "BackendUnavailable",
    "ScriptExhausted",
    "EnqueueWhileListening",
    "Predictor",
    "DEFAULT_CHUNK_PERIOD_MS",
]

DEFAULT_CHUNK_PERIOD_MS = 640


class BackendUnavailable(Exception):
    """A remote backend could not be reached or answered malformed data."""


class ScriptExhausted(Exception):
    """A scripted backend ran out of script; signals test misconfiguration."""


class EnqueueWhileListening(Exception):
    """Machine text reached the motor while the session was listening.

    The motor must never voice anything outside the speaking state; this
    guards against engine bugs, not predictor behaviour.
    """


@dataclass(frozen=True)
class Chunk:
    """One perception output unit on the fixed chunk period.

    ``text`` is None for a moment of silence. ``final`` marks the end of a
    simulated utterance; a contentless final chunk is the recognizer's
    endpoint signal in semi-streaming mode.
    """

    t_ms: int
    text: str | None = None
    final: bool = False

    def __post_init__(self):
        if self.text is not None and not self.text.strip():
            raise ValueError("chunk text, when present, must be non-empty")


@dataclass(frozen=True)
class VoicedReport:
    """Completion report for one voiced machine token."""

    entry_index: int
    finished_at_ms: int


class OutputKind(enum.Enum):
    TEXT = "text"
    CONTROL = "control"


@dataclass(frozen=True)
class PredictorOutput:
    """One decode step's product: a text token or a control token."""

    kind: OutputKind
    payload: str | ControlToken
    decode_cost_ms: int = 0

    def __post_init__(self):
        if self.decode_cost_ms < 0:
            raise ValueError("decode cost must be non-negative")
        if self.kind is OutputKind.CONTROL and not isinstance(self.payload, ControlToken):
            raise ValueError("control outputs carry a ControlToken payload")
        if self.kind is OutputKind.TEXT and not isinstance(self.payload, str):
            raise ValueError("text outputs carry a string payload")

    @classmethod
    def text(cls, payload: str, decode_cost_ms: int = 0) -> "PredictorOutput":
        return cls(OutputKind.TEXT, payload, decode_cost_ms)

    @classmethod
    def control(cls, token: ControlToken, decode_cost_ms: int = 0) -> "PredictorOutput":
        return cls(OutputKind.CONTROL, token, decode_cost_ms)


class PerceptionMode(enum.Enum):
    NON_STREAMING = "non_streaming"
    SEMI_STREAMING = "semi_streaming"
    STREAMING = "streaming"


@dataclass(frozen=True)
class PerceptionTimingModel:
    mode: PerceptionMode
    chunk_period_ms: int = DEFAULT_CHUNK_PERIOD_MS
    vad_endpoint_ms: int = 700
    finalize_ms: int = 1035
    speech_rate_wpm: int = 150

    def __post_init__(self):
        if self.chunk_period_ms <= 0:
            raise ValueError("chunk period must be positive")
        if self.vad_endpoint_ms < 0 or self.finalize_ms < 0:
            raise ValueError("endpoint and finalize delays must be non-negative")
        if self.speech_rate_wpm <= 0:
            raise ValueError("speech rate must be positive")

    @property
    def words_per_chunk(self) -> int:
        return math.ceil(self.speech_rate_wpm * self.chunk_period_ms / 60000)


class MotorMode(enum.Enum):
    NON_STREAMING = "non_streaming"
    STREAMING = "streaming"


@dataclass(frozen=True)
class MotorTimingModel:
    """Voicing costs. Streaming voices each token as it arrives; the
    non-streaming mode buffers the whole reply, synthesizes it after
    sealing (setup + one per-token cost per word), then plays it back.
    """

    mode: MotorMode
    per_token_voicing_ms: int = 80
    synthesis_setup_ms: int = 120

    def __post_init__(self):
        if self.per_token_voicing_ms < 0 or self.synthesis_setup_ms < 0:
            raise ValueError("motor durations must be non-negative")


@runtime_checkable
class Predictor(Protocol):
    def next(self, view: str) -> PredictorOutput: ...
