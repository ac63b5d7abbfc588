import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from duplexkit.fsm import (
    INITIAL_STATE,
    TRANSITIONS,
    ControlToken,
    FsmState,
    InvalidTransition,
    apply_control,
    parse_control,
    render_control,
    valid_controls,
)

ALL_PAIRS = list(itertools.product(FsmState, ControlToken))

EXPECTED = {
    (FsmState.SPEAK, ControlToken.C_SPEAK): FsmState.SPEAK,
    (FsmState.SPEAK, ControlToken.S_LISTEN): FsmState.LISTEN,
    (FsmState.LISTEN, ControlToken.C_LISTEN): FsmState.LISTEN,
    (FsmState.LISTEN, ControlToken.S_SPEAK): FsmState.SPEAK,
}


def test_exactly_two_states():
    assert {s.value for s in FsmState} == {"SPEAK", "LISTEN"}


def test_surface_bijection():
    surfaces = {t.surface for t in ControlToken}
    assert surfaces == {"[C.SPEAK]", "[S.LISTEN]", "[C.LISTEN]", "[S.SPEAK]"}
    assert len(surfaces) == len(ControlToken) == 4


def test_transition_table_is_exactly_the_four_pairs():
    assert TRANSITIONS == EXPECTED


@pytest.mark.parametrize("state,token", ALL_PAIRS)
def test_all_eight_pairs(state, token):
    if (state, token) in EXPECTED:
        assert apply_control(state, token) is EXPECTED[(state, token)]
    else:
        with pytest.raises(InvalidTransition):
            apply_control(state, token)


def test_listen_s_speak_starts_speaking():
    assert apply_control(FsmState.LISTEN, ControlToken.S_SPEAK) is FsmState.SPEAK


def test_speak_c_speak_keeps_speaking():
    assert apply_control(FsmState.SPEAK, ControlToken.C_SPEAK) is FsmState.SPEAK


def test_s_listen_only_defined_from_speak():
    with pytest.raises(InvalidTransition):
        apply_control(FsmState.LISTEN, ControlToken.S_LISTEN)


def test_valid_controls():
    assert valid_controls(FsmState.SPEAK) == {ControlToken.C_SPEAK, ControlToken.S_LISTEN}
    assert valid_controls(FsmState.LISTEN) == {ControlToken.C_LISTEN, ControlToken.S_SPEAK}


@pytest.mark.parametrize("state", list(FsmState))
def test_every_state_accepts_exactly_two_tokens(state):
    assert len(valid_controls(state)) == 2


def test_self_loops_and_switches():
    for state, token in EXPECTED:
        target = EXPECTED[(state, token)]
        if token in (ControlToken.C_SPEAK, ControlToken.C_LISTEN):
            assert target is state
        else:
            assert target is not state


def test_reachability_within_one_transition():
    for src in FsmState:
        reachable = {apply_control(src, t) for t in valid_controls(src)}
        assert reachable == set(FsmState)


def test_initial_state_is_listen():
    assert INITIAL_STATE is FsmState.LISTEN


def test_parse_bare_control():
    assert parse_control("[C.LISTEN]") == (ControlToken.C_LISTEN, "")


def test_parse_control_with_remainder():
    got = parse_control("[S.SPEAK] Sure, the result of 2 + 3 is 5.")
    assert got == (ControlToken.S_SPEAK, " Sure, the result of 2 + 3 is 5.")


def test_parse_plain_text_is_none():
    assert parse_control("hello") is None


def test_parse_tolerates_leading_whitespace():
    assert parse_control("  \n\t[S.LISTEN]xyz") == (ControlToken.S_LISTEN, "xyz")


@pytest.mark.parametrize(
    "text",
    ["[s.speak]", "[S SPEAK]", "(S.SPEAK)", "x [S.SPEAK]", "[S.SPEAK", "S.SPEAK]"],
)
def test_parse_rejects_inexact_forms(text):
    assert parse_control(text) is None


@pytest.mark.parametrize("token", list(ControlToken))
def test_codec_round_trip(token):
    assert render_control(token) == token.surface
    assert parse_control(render_control(token)) == (token, "")


@given(st.sampled_from(list(ControlToken)), st.text(max_size=30))
def test_parse_after_render_with_suffix(token, suffix):
    got = parse_control(render_control(token) + suffix)
    assert got is not None
    parsed, rest = got
    # A suffix that itself opens another surface form still parses the
    # leading token first; the remainder is always the verbatim suffix.
    assert parsed is token
    assert rest == suffix


@given(st.text(max_size=40))
def test_parse_none_iff_no_leading_surface(text):
    got = parse_control(text)
    has_prefix = any(text.lstrip().startswith(t.surface) for t in ControlToken)
    assert (got is not None) == has_prefix
