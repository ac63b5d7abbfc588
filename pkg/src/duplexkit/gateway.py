"""Live-session service: one engine per connection over a message stream.

Typed text stands in for the perception stream: it is buffered and cut
into chunks on the chunk period, with silence chunks synthesized while
the user is idle. Every engine event is mirrored onto the wire as a
single-line JSON message; every control message is immediately followed
by a state message carrying the post-transition state.

The clock is externalized: in normal serving an asyncio ticker advances
sessions in real time, while tests (or any deterministic client) may run
a session with ``manual_clock`` and drive it by sending tick messages.
"""

from __future__ import annotations

import asyncio
import json
import re
from dataclasses import dataclass, field
from typing import Callable

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import __version__
from .backends.base import MotorMode, MotorTimingModel, PerceptionMode
from .backends.scripted import SimulatedMotor
from .engine import Engine, EngineConfig
from .fsm import INITIAL_STATE, apply_control, parse_control

__all__ = ["GatewaySettings", "TypedTextPerception", "LiveSession", "create_app"]


class TypedTextPerception:
    """Perception source fed by typed text instead of a recognizer."""

    mode = PerceptionMode.STREAMING

    def __init__(self, chunk_period_ms: int):
        self.chunk_period_ms = chunk_period_ms
        self.records: list = []
        self._pending: list[str] = []
        self._next_boundary = chunk_period_ms

    def push(self, text: str) -> None:
        self._pending.extend(text.split())

    def next_event_ms(self) -> int | None:
        return self._next_boundary

    def next_is_endpoint(self) -> bool:
        return False

    def poll(self, now_ms: int):
        from .backends.base import Chunk

        if now_ms < self._next_boundary:
            return None
        boundary = self._next_boundary
        self._next_boundary = boundary + self.chunk_period_ms
        if self._pending:
            text = " ".join(self._pending)
            self._pending = []
            return Chunk(boundary, text=text)
        return Chunk(boundary)


@dataclass
class GatewaySettings:
    predictor_factory: Callable[[Engine], object]
    chunk_period_ms: int = 640
    session_limit: int = 8
    system_prompt: str = "You are an intelligent voice assistant."
    motor: MotorTimingModel = field(
        default_factory=lambda: MotorTimingModel(MotorMode.STREAMING, 80, 120)
    )
    manual_clock: bool = False
    max_session_ms: int = 3_600_000


_VOICED = re.compile(r"entry=(\d+) start=(\d+) end=(\d+)")


class LiveSession:
    """One connection's engine plus the event-to-wire mirror."""

    def __init__(self, settings: GatewaySettings):
        config = EngineConfig(
            chunk_period_ms=settings.chunk_period_ms,
            max_virtual_ms=settings.max_session_ms,
            system_prompt=settings.system_prompt,
        )
        self.perception = TypedTextPerception(settings.chunk_period_ms)
        self.motor = SimulatedMotor(settings.motor)
        self.engine = Engine(config, None, self.perception, self.motor)
        self.engine.predictor = settings.predictor_factory(self.engine)
        self._event_cursor = 0
        self._wire_state = INITIAL_STATE
        self._last_user_text_ms: int | None = None
        self._fted_reported = True
        self.last_fted_ms: int | None = None

    def push_user_text(self, text: str) -> None:
        if text.strip():
            self.perception.push(text)

    def tick(self, now_ms: int) -> list[dict]:
        """Advance the engine to the wall clock and mirror new events."""
        while self.engine.advance(until_ms=now_ms):
            pass
        return self._drain_messages()

    def close(self, now_ms: int) -> list[dict]:
        discarded = self.motor.cancel(max(now_ms, self.engine.now_ms))
        messages = self._drain_messages()
        messages.append(
            {"type": "metrics", "t_ms": now_ms, "fted_ms": self.last_fted_ms,
             "cancelled_tokens": discarded}
        )
        return messages

    def _drain_messages(self) -> list[dict]:
        out: list[dict] = []
        events = self.engine.events
        while self._event_cursor < len(events):
            t, kind, detail = events[self._event_cursor]
            self._event_cursor += 1
            if kind == "chunk_text":
                self._last_user_text_ms = t
                self._fted_reported = False
                out.append({"type": "user_chunk", "t_ms": t, "text": detail, "silence": False})
            elif kind == "chunk_silence":
                out.append({"type": "user_chunk", "t_ms": t, "silence": True})
            elif kind == "text":
                entry_index, _, text = detail.partition(" ")
                out.append(
                    {
                        "type": "machine_token",
                        "t_ms": t,
                        "text": text,
                        "entry_index": int(entry_index.removeprefix("entry=")),
                    }
                )
            elif kind == "control":
                surface = detail.split(" ")[0]
                parsed = parse_control(surface)
                if parsed is not None:
                    self._wire_state = apply_control(self._wire_state, parsed[0])
                out.append({"type": "control", "t_ms": t, "control": surface})
                out.append({"type": "state", "t_ms": t, "state": self._wire_state.value})
            elif kind == "voiced":
                m = _VOICED.match(detail)
                entry, start = int(m.group(1)), int(m.group(2))
                out.append({"type": "voiced", "t_ms": t, "entry_index": entry})
                if not self._fted_reported and self._last_user_text_ms is not None:
                    if start >= self._last_user_text_ms:
                        self.last_fted_ms = start - self._last_user_text_ms
                        self._fted_reported = True
                        out.append(
                            {"type": "metrics", "t_ms": t, "fted_ms": self.last_fted_ms}
                        )
            elif kind == "protocol_violation":
                out.append({"type": "error", "t_ms": t, "message": detail})
        return out


def create_app(settings: GatewaySettings) -> FastAPI:
    app = FastAPI(title="duplexkit gateway", version=__version__)
    app.state.active_sessions = 0
    app.state.settings = settings

    @app.get("/health")
    def health() -> dict:
        return {"version": __version__, "active_sessions": app.state.active_sessions}

    @app.websocket("/session")
    async def session_socket(ws: WebSocket) -> None:
        await ws.accept()
        if app.state.active_sessions >= settings.session_limit:
            await ws.send_text(
                json.dumps({"type": "error", "t_ms": 0, "message": "session limit reached"})
            )
            await ws.close(code=1013)
            return
        app.state.active_sessions += 1
        session = LiveSession(settings)
        now = 0

        async def send_all(messages: list[dict]) -> None:
            for message in messages:
                await ws.send_text(json.dumps(message))

        ticker_task = None
        if not settings.manual_clock:
            loop = asyncio.get_running_loop()
            started = loop.time()

            async def ticker() -> None:
                nonlocal now
                while True:
                    await asyncio.sleep(settings.chunk_period_ms / 1000)
                    now = int((loop.time() - started) * 1000)
                    await send_all(await loop.run_in_executor(None, session.tick, now))

            ticker_task = asyncio.create_task(ticker())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    message = json.loads(raw)
                except json.JSONDecodeError:
                    await send_all([{"type": "error", "t_ms": now, "message": "not JSON"}])
                    continue
                mtype = message.get("type")
                if mtype == "user_text":
                    session.push_user_text(str(message.get("text", "")))
                elif mtype == "tick" and settings.manual_clock:
                    now = int(message.get("t_ms", now))
                    await send_all(session.tick(now))
                elif mtype == "close":
                    await send_all(session.close(now))
                    await ws.close()
                    return
                else:
                    await send_all(
                        [{"type": "error", "t_ms": now, "message": f"unknown message {mtype!r}"}]
                    )
        except WebSocketDisconnect:
            session.close(now)
        finally:
            if ticker_task is not None:
                ticker_task.cancel()
            app.state.active_sessions -= 1

    return app
