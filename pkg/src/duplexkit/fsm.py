"""Two-state turn-taking state machine driven by inline control tokens.

The dialogue engine is governed by a finite state machine with exactly two
states, SPEAK and LISTEN. A predictor signals state transitions by emitting
one of four control tokens; each token is valid from exactly one state, so
of the eight (state, token) pairs only four are legal transitions. The
bracketed surface strings are the wire representation everywhere: tape,
prompts, logs, and the gateway protocol.
"""

from __future__ import annotations

import enum

__all__ = [
    "FsmState",
    "ControlToken",
    "InvalidTransition",
    "TRANSITIONS",
    "INITIAL_STATE",
    "apply_control",
    "valid_controls",
    "parse_control",
    "render_control",
]


class FsmState(enum.Enum):
    SPEAK = "SPEAK"
    LISTEN = "LISTEN"


class ControlToken(enum.Enum):
    """The four transition tokens, carrying their exact surface strings."""

    C_SPEAK = "[C.SPEAK]"
    S_LISTEN = "[S.LISTEN]"
    C_LISTEN = "[C.LISTEN]"
    S_SPEAK = "[S.SPEAK]"

    @property
    def surface(self) -> str:
        return self.value


class InvalidTransition(Exception):
    """A control token was applied from a state it is not defined for.

    Signals a protocol violation by the predictor; never raised for
    well-formed control traffic.
    """

    def __init__(self, state: FsmState, token: ControlToken):
        self.state = state
        self.token = token
        super().__init__(f"{token.surface} is not a valid control in state {state.value}")


# The four legal transitions. C_* tokens hold the current state, S_* tokens
# switch it; every other (state, token) pair is a protocol violation.
TRANSITIONS: dict[tuple[FsmState, ControlToken], FsmState] = {
    (FsmState.SPEAK, ControlToken.C_SPEAK): FsmState.SPEAK,
    (FsmState.SPEAK, ControlToken.S_LISTEN): FsmState.LISTEN,
    (FsmState.LISTEN, ControlToken.C_LISTEN): FsmState.LISTEN,
    (FsmState.LISTEN, ControlToken.S_SPEAK): FsmState.SPEAK,
}

# A fresh session always starts listening: the user opens every dialogue.
INITIAL_STATE = FsmState.LISTEN

_SURFACE_TO_TOKEN = {token.surface: token for token in ControlToken}


def apply_control(state: FsmState, token: ControlToken) -> FsmState:
    """Return the state reached by applying ``token`` from ``state``.

    Raises:
        InvalidTransition: if the pair is not one of the four defined
            transitions.
    """
    try:
        return TRANSITIONS[(state, token)]
    except KeyError:
        raise InvalidTransition(state, token) from None


def valid_controls(state: FsmState) -> set[ControlToken]:
    """Return the tokens accepted from ``state`` (always exactly two)."""
    return {token for (src, token) in TRANSITIONS if src is state}


def parse_control(text: str) -> tuple[ControlToken, str] | None:
    """Parse a control token from the start of ``text``.

    Leading whitespace is tolerated, but the bracketed form itself must
    match verbatim (case-sensitive, exact punctuation): fuzzy matching
    would mask predictor defects. Returns ``(token, remainder)`` or
    ``None`` when no surface form is present; absence is a normal outcome.
    """
    stripped = text.lstrip()
    for surface, token in _SURFACE_TO_TOKEN.items():
        if stripped.startswith(surface):
            return token, stripped[len(surface):]
    return None


def render_control(token: ControlToken) -> str:
    """Return the surface string for ``token``; inverse of parse_control."""
    return token.surface
