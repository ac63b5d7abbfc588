import io
import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from duplexkit.fsm import ControlToken, FsmState, InvalidTransition, valid_controls
from duplexkit.tape import (
    CausalityViolation,
    EngineEvent,
    EntrySource,
    EventKind,
    Tape,
    TapeFormatError,
    current_state,
    dump_tape,
    load_tape,
    next_trigger,
    render_view,
)

SYS = "You are a voice assistant."


def make_tape():
    return Tape(SYS)


class TestAppend:
    def test_first_entry_is_system_prompt(self):
        tape = make_tape()
        assert tape.entries[0].source is EntrySource.SYSTEM_PROMPT
        assert tape.entries[0].payload == SYS

    def test_monotone_time_accepted(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hi", 640)
        entry = tape.append(EntrySource.SILENCE_CHUNK, "", 1280)
        assert entry.index == 2

    def test_equal_time_accepted(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hi", 640)
        tape.append_control(ControlToken.S_SPEAK, 640)

    def test_backwards_time_rejected(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hi", 640)
        with pytest.raises(CausalityViolation):
            tape.append(EntrySource.SILENCE_CHUNK, "", 500)

    def test_silence_in_listen_has_empty_payload(self):
        tape = make_tape()
        entry = tape.append(EntrySource.SILENCE_CHUNK, "", 640)
        assert entry.payload == ""
        assert tape.state is FsmState.LISTEN

    def test_silence_with_payload_rejected(self):
        with pytest.raises(TapeFormatError):
            make_tape().append(EntrySource.SILENCE_CHUNK, "shh", 640)

    def test_user_chunk_requires_marker_and_text(self):
        tape = make_tape()
        with pytest.raises(TapeFormatError):
            tape.append(EntrySource.USER_CHUNK, "hi", 640)
        with pytest.raises(TapeFormatError):
            tape.append(EntrySource.USER_CHUNK, "<usr>", 640)

    def test_control_updates_cached_state(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hi", 640)
        tape.append_control(ControlToken.S_SPEAK, 700)
        assert tape.state is FsmState.SPEAK
        tape.append_control(ControlToken.S_LISTEN, 900)
        assert tape.state is FsmState.LISTEN

    def test_invalid_control_propagates(self):
        tape = make_tape()
        with pytest.raises(InvalidTransition):
            tape.append_control(ControlToken.C_SPEAK, 640)

    def test_non_surface_control_payload_rejected(self):
        with pytest.raises(TapeFormatError):
            make_tape().append(EntrySource.CONTROL, "[S.SPEAK] extra", 640)

    def test_second_system_prompt_rejected(self):
        with pytest.raises(TapeFormatError):
            make_tape().append(EntrySource.SYSTEM_PROMPT, "again", 0)

    def test_mark_voiced(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hi", 640)
        tape.append_control(ControlToken.S_SPEAK, 650)
        entry = tape.append(EntrySource.MACHINE_TEXT, "Sure,", 700)
        assert not entry.voiced
        tape.mark_voiced(entry.index)
        assert tape.entries[entry.index].voiced

    def test_mark_voiced_only_machine_text(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hi", 640)
        with pytest.raises(TapeFormatError):
            tape.mark_voiced(1)


# Legal single-session op sequences for the fold property: interleave
# chunks with controls that are valid in the running state.
@st.composite
def legal_ops(draw):
    n = draw(st.integers(min_value=0, max_value=30))
    ops = []
    state = FsmState.LISTEN
    for _ in range(n):
        kind = draw(st.sampled_from(["usr", "sil", "ctl", "mtx"]))
        if kind == "ctl":
            token = draw(st.sampled_from(sorted(valid_controls(state), key=lambda t: t.name)))
            ops.append(("ctl", token))
            state = {ControlToken.S_SPEAK: FsmState.SPEAK,
                     ControlToken.S_LISTEN: FsmState.LISTEN}.get(token, state)
        else:
            ops.append((kind, None))
    return ops


@given(legal_ops())
def test_cached_state_equals_fold(ops):
    tape = make_tape()
    t = 0
    for kind, token in ops:
        t += 10
        if kind == "usr":
            tape.append(EntrySource.USER_CHUNK, "<usr>w", t)
        elif kind == "sil":
            tape.append(EntrySource.SILENCE_CHUNK, "", t)
        elif kind == "mtx":
            tape.append(EntrySource.MACHINE_TEXT, "m", t)
        else:
            tape.append_control(token, t)
    assert current_state(tape) is tape.state
    assert all(b.t_ms >= a.t_ms for a, b in zip(tape.entries, tape.entries[1:]))


class TestNextTrigger:
    def _tape_with_speak_head(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hi", 640)
        tape.append_control(ControlToken.S_SPEAK, 650)
        return tape

    def test_full_set_picks_control_speak(self):
        tape = self._tape_with_speak_head()
        pending = [
            EngineEvent(EventKind.TOKEN_VOICED, seq=1),
            EngineEvent(EventKind.CONTROL_SPEAK_PENDING, seq=2),
            EngineEvent(EventKind.CHUNK_ARRIVED, seq=3),
        ]
        assert next_trigger(pending, tape).kind is EventKind.CONTROL_SPEAK_PENDING

    def test_chunk_beats_token(self):
        tape = make_tape()
        pending = [
            EngineEvent(EventKind.TOKEN_VOICED, seq=1),
            EngineEvent(EventKind.CHUNK_ARRIVED, seq=2),
        ]
        assert next_trigger(pending, tape).kind is EventKind.CHUNK_ARRIVED

    def test_empty_set_idles(self):
        assert next_trigger([], make_tape()) is None

    def test_fifo_within_kind(self):
        tape = make_tape()
        pending = [
            EngineEvent(EventKind.CHUNK_ARRIVED, seq=7),
            EngineEvent(EventKind.CHUNK_ARRIVED, seq=3),
            EngineEvent(EventKind.CHUNK_ARRIVED, seq=5),
        ]
        assert next_trigger(pending, tape).seq == 3

    def test_control_speak_requires_matching_tape_head(self):
        tape = make_tape()
        with pytest.raises(ValueError):
            next_trigger([EngineEvent(EventKind.CONTROL_SPEAK_PENDING)], tape)

    @given(
        st.lists(
            st.tuples(
                st.sampled_from([EventKind.CHUNK_ARRIVED, EventKind.TOKEN_VOICED]),
                st.integers(min_value=0, max_value=1000),
            ),
            min_size=1,
            max_size=12,
            unique_by=lambda kv: kv[1],
        )
    )
    def test_priority_then_fifo_property(self, pairs):
        tape = make_tape()
        pending = [EngineEvent(kind, seq=seq) for kind, seq in pairs]
        chosen = next_trigger(pending, tape)
        best_kind = min(e.kind for e in pending)
        assert chosen.kind is best_kind
        assert chosen.seq == min(e.seq for e in pending if e.kind is best_kind)


class TestRenderView:
    def test_interleaved_controls_inline(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>Hi, could you", 640)
        tape.append_control(ControlToken.C_LISTEN, 650)
        tape.append(EntrySource.USER_CHUNK, "<usr>tell me", 1280)
        assert render_view(tape) == f"{SYS}\n\nHi, could you [C.LISTEN] tell me"

    def test_concession_lands_inline_mid_question(self):
        # A reply in progress is interrupted by the user's next question;
        # the concede control renders inline between the question's chunks.
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>hello there", 640)
        tape.append_control(ControlToken.S_SPEAK, 650)
        tape.append(EntrySource.MACHINE_TEXT, "Hi!", 700)
        tape.append(EntrySource.USER_CHUNK, "<usr>Hi, could you", 1280)
        tape.append_control(ControlToken.S_LISTEN, 1290)
        tape.append(EntrySource.USER_CHUNK, "<usr>tell me", 1920)
        view = render_view(tape)
        assert view.endswith("Hi, could you [S.LISTEN] tell me")

    def test_system_prompt_only(self):
        assert render_view(make_tape()) == SYS

    def test_silence_renders_as_nothing(self):
        tape = make_tape()
        tape.append(EntrySource.SILENCE_CHUNK, "", 640)
        tape.append_control(ControlToken.C_LISTEN, 650)
        assert render_view(tape) == f"{SYS}\n\n[C.LISTEN]"

    def test_machine_text_inline_after_speak(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>the result of 2+3", 640)
        tape.append_control(ControlToken.S_SPEAK, 650)
        tape.append(EntrySource.MACHINE_TEXT, "Sure,", 700)
        tape.append(EntrySource.MACHINE_TEXT, "5.", 800)
        assert render_view(tape) == f"{SYS}\n\nthe result of 2+3 [S.SPEAK] Sure, 5."

    def test_injective_on_producible_four_entry_tapes(self):
        # Brute-force oracle: enumerate every 4-entry tape producible under
        # the protocol rules (first trigger is a chunk; a control lands
        # before the next chunk; a speak control decodes machine text
        # immediately) and check views are pairwise distinct.
        user_vocab = ["a", "b", "a b"]
        machine_vocab = ["x", "y"]
        tapes = []

        def chunk_options():
            return [("usr", w) for w in user_vocab] + [("sil", "")]

        for first in chunk_options():
            for ctl in sorted(valid_controls(FsmState.LISTEN), key=lambda t: t.name):
                if ctl is ControlToken.S_SPEAK:
                    thirds = [("mtx", w) for w in machine_vocab]
                else:
                    thirds = chunk_options()
                for third in thirds:
                    tape = make_tape()
                    for t_ms, (kind, text) in zip((640, 700, 1280), [first, ("ctl", ctl), third]):
                        if kind == "usr":
                            tape.append(EntrySource.USER_CHUNK, f"<usr>{text}", t_ms)
                        elif kind == "sil":
                            tape.append(EntrySource.SILENCE_CHUNK, "", t_ms)
                        elif kind == "mtx":
                            tape.append(EntrySource.MACHINE_TEXT, text, t_ms)
                        else:
                            tape.append_control(text, t_ms)
                    tapes.append(tape)

        views = [render_view(t) for t in tapes]
        assert len(views) == len(set(views)), "distinct tapes must render distinct views"


class TestDumpLoad:
    def _session_tape(self):
        tape = make_tape()
        tape.append(EntrySource.USER_CHUNK, "<usr>Hi, could you", 640)
        tape.append_control(ControlToken.C_LISTEN, 650)
        tape.append(EntrySource.USER_CHUNK, "<usr>tell me the result of 2+3", 1280)
        tape.append_control(ControlToken.S_SPEAK, 1290)
        entry = tape.append(EntrySource.MACHINE_TEXT, "Sure,", 1365)
        tape.mark_voiced(entry.index)
        tape.append(EntrySource.SILENCE_CHUNK, "", 1920)
        return tape

    def test_round_trip(self):
        tape = self._session_tape()
        buf = io.StringIO()
        dump_tape(tape, buf)
        buf.seek(0)
        loaded = load_tape(buf)
        assert [e.to_record() for e in loaded.entries] == [e.to_record() for e in tape.entries]
        assert loaded.state is tape.state
        assert render_view(loaded) == render_view(tape)

    def test_dump_is_one_record_per_line(self):
        buf = io.StringIO()
        dump_tape(self._session_tape(), buf)
        lines = [l for l in buf.getvalue().splitlines() if l]
        assert len(lines) == 7
        assert all(l.startswith("{") for l in lines)

    def test_load_rejects_garbage(self):
        with pytest.raises(TapeFormatError):
            load_tape(io.StringIO("not json\n"))

    def test_load_rejects_missing_prompt(self):
        buf = io.StringIO(
            '{"index": 0, "t_ms": 0, "source": "user_chunk", "payload": "<usr>hi", "voiced": false}\n'
        )
        with pytest.raises(TapeFormatError):
            load_tape(buf)

    def test_load_rejects_causality_break(self):
        tape = self._session_tape()
        buf = io.StringIO()
        dump_tape(tape, buf)
        lines = buf.getvalue().splitlines()
        lines[1], lines[5] = lines[5], lines[1]
        with pytest.raises((TapeFormatError, CausalityViolation)):
            load_tape(io.StringIO("\n".join(lines)))
