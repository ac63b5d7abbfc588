"""Streaming text-completion client and the remote predictor built on it.

The wire protocol is the common completions shape: POST a JSON body with
``model``, ``prompt``, optional ``stop`` and ``stream``; non-streaming
responses carry ``choices[0].text``, streaming responses are ``data:``
server-sent-event lines with incremental ``choices[0].text`` deltas and a
``[DONE]`` sentinel. Any transport failure or malformed payload surfaces
as BackendUnavailable.
"""

from __future__ import annotations

import json
from typing import Callable, Iterator

import httpx

from ..config import BackendConfig
from ..fsm import ControlToken, FsmState, parse_control
from ..tape import Tape, render_stream
from .base import BackendUnavailable, PredictorOutput

__all__ = ["CompletionClient", "RemotePredictor", "remote_judge_factory"]


class CompletionClient:
    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            timeout=config.timeout_s, headers=headers, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def _body(self, prompt: str, stop: list[str] | None, stream: bool) -> dict:
        body = {
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": self.config.max_tokens,
            "stream": stream,
        }
        if stop:
            body["stop"] = stop
        return body

    def complete(self, prompt: str, stop: list[str] | None = None) -> str:
        try:
            resp = self._client.post(self.config.endpoint_url, json=self._body(prompt, stop, False))
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["text"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailable(f"completion request failed: {exc}") from exc

    def stream(self, prompt: str, stop: list[str] | None = None) -> Iterator[str]:
        """Yield text deltas from a streaming completion."""
        try:
            with self._client.stream(
                "POST", self.config.endpoint_url, json=self._body(prompt, stop, True)
            ) as resp:
                resp.raise_for_status()
                for line in resp.iter_lines():
                    line = line.strip()
                    if not line or not line.startswith("data:"):
                        continue
                    payload = line[len("data:"):].strip()
                    if payload == "[DONE]":
                        return
                    try:
                        delta = json.loads(payload)["choices"][0]["text"]
                    except (KeyError, IndexError, ValueError) as exc:
                        raise BackendUnavailable(f"malformed stream payload: {payload!r}") from exc
                    if delta:
                        yield delta
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"completion stream failed: {exc}") from exc


class RemotePredictor:
    """Predictor backed by a completion endpoint.

    Each decode step serves one output unit: the head of the model's
    pending completion, re-requested whenever the dialogue advanced in a
    way the predictor did not produce itself (a fresh user chunk
    invalidates the carried text).
    """

    def __init__(
        self,
        client: CompletionClient,
        system_prompt: str,
        tape_reader: Callable[[], Tape] | None = None,
    ):
        self.client = client
        self.system_prompt = system_prompt
        self._tape = tape_reader
        self._carry = ""
        self._expected_stream: str | None = None

    def _prompt(self, stream_text: str) -> str:
        return f"{self.system_prompt}\n\nQuery: {stream_text}\nAnswer:"

    def next(self, view: str) -> PredictorOutput:
        stream_text = render_stream(self._tape()) if self._tape is not None else view
        if stream_text != self._expected_stream:
            self._carry = ""  # the dialogue moved on without us
        if not self._carry.strip():
            self._carry = ""
            for delta in self.client.stream(self._prompt(stream_text)):
                self._carry += delta
                if self._unit_ready(self._carry):
                    break
        unit, self._carry = self._take_unit(self._carry)
        if unit is None:
            # An empty completion is the model choosing to stay quiet.
            fallback = self._idle_control(stream_text)
            self._expected_stream = self._append(stream_text, fallback.surface)
            return PredictorOutput.control(fallback, 0)
        if isinstance(unit, ControlToken):
            self._expected_stream = self._append(stream_text, unit.surface)
            return PredictorOutput.control(unit, 0)
        self._expected_stream = self._append(stream_text, unit)
        return PredictorOutput.text(unit, 0)

    @staticmethod
    def _append(stream_text: str, token: str) -> str:
        return f"{stream_text} {token}" if stream_text else token

    @staticmethod
    def _unit_ready(text: str) -> bool:
        stripped = text.lstrip()
        if parse_control(stripped):
            return True
        return " " in stripped or "\n" in stripped

    @staticmethod
    def _take_unit(text: str) -> tuple[ControlToken | str | None, str]:
        stripped = text.lstrip()
        if not stripped:
            return None, ""
        parsed = parse_control(stripped)
        if parsed is not None:
            return parsed[0], parsed[1]
        parts = stripped.split(None, 1)
        head = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        return head, rest

    def _idle_control(self, stream_text: str) -> ControlToken:
        state = FsmState.LISTEN
        if self._tape is not None:
            state = self._tape().state
        return ControlToken.C_LISTEN if state is FsmState.LISTEN else ControlToken.C_SPEAK


def remote_judge_factory(client: CompletionClient, audit: dict[str, str] | None = None):
    """A judge callable scoring records through the completion endpoint.

    When ``audit`` is given, every raw judge response is archived in it by
    case id so reports can carry the judging transcripts.
    """
    from ..metrics import parse_judge_output, render_judge_prompt

    def judge(record):
        prompt = render_judge_prompt(record.kind, record.history_text)
        response = client.complete(prompt)
        if audit is not None:
            audit[record.case_id] = response
        return parse_judge_output(record.kind, response)

    return judge
