"""Benchmark case schemas, validation, prompt rendering, and transcript parsing.

A benchmark file is line-delimited JSON, one dialogue case per line. Two
case kinds exist: the machine may interrupt the user's final utterance
(machine_interrupts_user), or the user barges in on an unfinished machine
reply (user_interrupts_machine, with one of four interruption categories).
Cases may carry an ``annotations`` block driving the scripted simulation
backends and the deterministic rule judge.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from .fsm import ControlToken

__all__ = [
    "NOT_FINISHED",
    "Role",
    "CaseKind",
    "Category",
    "DialogueTurn",
    "JudgeAnnotation",
    "CaseAnnotations",
    "DialogueCase",
    "BenchmarkSet",
    "SchemaError",
    "ValidationError",
    "ParseError",
    "MissingPlaceholder",
    "load",
    "loads",
    "save",
    "validate",
    "render_prompt",
    "parse_transcript",
    "render_transcript",
    "make_training_sequence",
    "render_training_text",
    "TrainingItem",
]

NOT_FINISHED = "<NOT_FINISHED>"

TEMPLATE_FILES = {
    "training": "gen_training.txt",
    "bench_machine_interrupt": "gen_machine_interrupt.txt",
    "bench_user_interrupt": "gen_user_interrupt.txt",
}


class Role(enum.Enum):
    USR = "usr"
    SYS = "sys"


class CaseKind(enum.Enum):
    MACHINE_INTERRUPTS_USER = "machine_interrupts_user"
    USER_INTERRUPTS_MACHINE = "user_interrupts_machine"


class Category(enum.Enum):
    NOISE = "noise"
    DENIAL = "denial"
    AFFIRM = "affirm"
    SHIFT = "shift"


class SchemaError(Exception):
    def __init__(self, line: int, fieldname: str, message: str):
        self.line = line
        self.fieldname = fieldname
        super().__init__(f"line {line}, field {fieldname!r}: {message}")


class ValidationError(Exception):
    def __init__(self, case_id: str, rule: str, message: str = ""):
        self.case_id = case_id
        self.rule = rule
        super().__init__(f"case {case_id!r} violates {rule}" + (f": {message}" if message else ""))


class ParseError(Exception):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingPlaceholder(Exception):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"template placeholder {{{name}}} not provided")


@dataclass
class DialogueTurn:
    role: Role
    text: str
    not_finished: bool = False

    def visible_text(self) -> str:
        if self.text.endswith(NOT_FINISHED):
            return self.text[: -len(NOT_FINISHED)].rstrip()
        return self.text

    def to_record(self) -> dict:
        return {"role": self.role.value, "text": self.text, "not_finished": self.not_finished}


@dataclass
class JudgeAnnotation:
    timing_window: tuple[int, int] | None = None  # acceptable interrupt word range
    keywords: list[str] = field(default_factory=list)


@dataclass
class CaseAnnotations:
    """Scripted behaviour and judging oracle data for one case."""

    reply: str | None = None
    interrupt_after_words: int | None = None
    silence_chunks: int | None = None
    reply_tail: str | None = None
    interruption_reply: str | None = None
    interrupt_after_voiced_words: int | None = None
    judge: JudgeAnnotation | None = None

    def to_record(self) -> dict:
        rec: dict = {}
        for key in (
            "reply",
            "interrupt_after_words",
            "silence_chunks",
            "reply_tail",
            "interruption_reply",
            "interrupt_after_voiced_words",
        ):
            value = getattr(self, key)
            if value is not None:
                rec[key] = value
        if self.judge is not None:
            jrec: dict = {}
            if self.judge.timing_window is not None:
                jrec["timing_window"] = list(self.judge.timing_window)
            if self.judge.keywords:
                jrec["keywords"] = list(self.judge.keywords)
            rec["judge"] = jrec
        return rec


@dataclass
class DialogueCase:
    id: str
    kind: CaseKind
    turns: list[DialogueTurn]
    category: Category | None = None
    annotations: CaseAnnotations | None = None

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "kind": self.kind.value,
            "category": self.category.value if self.category else None,
            "turns": [t.to_record() for t in self.turns],
        }
        if self.annotations is not None:
            rec["annotations"] = self.annotations.to_record()
        return rec


@dataclass
class BenchmarkSet:
    cases: list[DialogueCase]

    @property
    def counts(self) -> dict[str, int]:
        out = {kind.value: 0 for kind in CaseKind}
        out.update({cat.value: 0 for cat in Category})
        for case in self.cases:
            out[case.kind.value] += 1
            if case.category is not None:
                out[case.category.value] += 1
        return out

    def by_id(self, case_id: str) -> DialogueCase:
        for case in self.cases:
            if case.id == case_id:
                return case
        raise KeyError(case_id)


# ---------------------------------------------------------------------------
# Loading / saving
# ---------------------------------------------------------------------------


def _parse_turn(line: int, i: int, rec) -> DialogueTurn:
    if not isinstance(rec, dict):
        raise SchemaError(line, f"turns[{i}]", "turn must be an object")
    try:
        role = Role(rec["role"])
    except (KeyError, ValueError):
        raise SchemaError(line, f"turns[{i}].role", "role must be 'usr' or 'sys'") from None
    text = rec.get("text")
    if not isinstance(text, str) or not text.strip():
        raise SchemaError(line, f"turns[{i}].text", "text must be a non-empty string")
    not_finished = rec.get("not_finished", False)
    if not isinstance(not_finished, bool):
        raise SchemaError(line, f"turns[{i}].not_finished", "must be a boolean")
    return DialogueTurn(role, text, not_finished)


def _parse_annotations(line: int, rec) -> CaseAnnotations:
    if not isinstance(rec, dict):
        raise SchemaError(line, "annotations", "must be an object")
    ann = CaseAnnotations()
    for key in ("reply", "reply_tail", "interruption_reply"):
        if key in rec and rec[key] is not None:
            if not isinstance(rec[key], str):
                raise SchemaError(line, f"annotations.{key}", "must be a string")
            setattr(ann, key, rec[key])
    for key in ("interrupt_after_words", "silence_chunks", "interrupt_after_voiced_words"):
        if key in rec and rec[key] is not None:
            if not isinstance(rec[key], int) or rec[key] < 0:
                raise SchemaError(line, f"annotations.{key}", "must be a non-negative integer")
            setattr(ann, key, rec[key])
    if "judge" in rec and rec["judge"] is not None:
        jrec = rec["judge"]
        if not isinstance(jrec, dict):
            raise SchemaError(line, "annotations.judge", "must be an object")
        judge = JudgeAnnotation()
        if "timing_window" in jrec and jrec["timing_window"] is not None:
            window = jrec["timing_window"]
            if (
                not isinstance(window, list)
                or len(window) != 2
                or not all(isinstance(x, int) for x in window)
            ):
                raise SchemaError(
                    line, "annotations.judge.timing_window", "must be [low, high] integers"
                )
            judge.timing_window = (window[0], window[1])
        if "keywords" in jrec and jrec["keywords"] is not None:
            kws = jrec["keywords"]
            if not isinstance(kws, list) or not all(isinstance(k, str) for k in kws):
                raise SchemaError(line, "annotations.judge.keywords", "must be a list of strings")
            judge.keywords = kws
        ann.judge = judge
    return ann


def _parse_case(line: int, rec: dict) -> DialogueCase:
    if not isinstance(rec, dict):
        raise SchemaError(line, "", "record must be a JSON object")
    case_id = rec.get("id")
    if not isinstance(case_id, str) or not case_id:
        raise SchemaError(line, "id", "must be a non-empty string")
    try:
        kind = CaseKind(rec["kind"])
    except (KeyError, ValueError):
        raise SchemaError(line, "kind", "must be a known case kind") from None
    category = None
    if rec.get("category") is not None:
        try:
            category = Category(rec["category"])
        except ValueError:
            raise SchemaError(line, "category", f"unknown category {rec['category']!r}") from None
    turns_rec = rec.get("turns")
    if not isinstance(turns_rec, list):
        raise SchemaError(line, "turns", "must be a list")
    turns = [_parse_turn(line, i, t) for i, t in enumerate(turns_rec)]
    annotations = None
    if rec.get("annotations") is not None:
        annotations = _parse_annotations(line, rec["annotations"])
    return DialogueCase(case_id, kind, turns, category, annotations)


def loads(text: str) -> BenchmarkSet:
    cases = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(lineno, "", f"not valid JSON: {exc}") from exc
        case = _parse_case(lineno, rec)
        if case.id in seen_ids:
            raise ValidationError(case.id, "UniqueId", "duplicate case id")
        seen_ids.add(case.id)
        validate(case)
        cases.append(case)
    return BenchmarkSet(cases)


def load(path: str | Path) -> BenchmarkSet:
    return loads(Path(path).read_text(encoding="utf-8"))


def save(bench: BenchmarkSet | Iterable[DialogueCase], path: str | Path) -> None:
    cases = bench.cases if isinstance(bench, BenchmarkSet) else list(bench)
    with open(path, "w", encoding="utf-8") as fp:
        for case in cases:
            fp.write(json.dumps(case.to_record(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_marker(case_id: str, turn: DialogueTurn) -> None:
    text = turn.text
    has_marker = text.endswith(NOT_FINISHED)
    if NOT_FINISHED in text and not has_marker:
        raise ValidationError(case_id, "MarkerPlacement", "truncation marker must end the turn")
    if turn.not_finished and not has_marker:
        raise ValidationError(case_id, "MarkerMissing", "unfinished turn lacks the marker")
    if not turn.not_finished and has_marker:
        raise ValidationError(case_id, "MarkerMismatch", "marker on a turn flagged finished")
    if has_marker:
        before = text[: -len(NOT_FINISHED)]
        if not before.endswith(" ") or not before.strip():
            raise ValidationError(
                case_id, "MidWordTruncation", "truncation must land after a complete word"
            )


def validate(case: DialogueCase) -> DialogueCase:
    """Enforce the case invariants; returns the case for chaining."""
    if not case.turns:
        raise ValidationError(case.id, "EmptyTurns", "a case needs at least one turn")
    for turn in case.turns:
        _check_marker(case.id, turn)
    last = case.turns[-1]
    if case.kind is CaseKind.MACHINE_INTERRUPTS_USER:
        if last.role is not Role.USR:
            raise ValidationError(case.id, "LastTurnRole", "last turn must be the user's utterance")
        if last.not_finished:
            raise ValidationError(case.id, "LastTurnFinished", "final utterance must be complete")
        if case.category is not None:
            raise ValidationError(case.id, "SpuriousCategory", "categories describe user interrupts")
    else:
        if case.category is None:
            raise ValidationError(case.id, "MissingCategory", "user interrupts carry a category")
        if last.role is not Role.USR:
            raise ValidationError(case.id, "LastTurnRole", "last turn must be the user's interruption")
        if len(case.turns) < 2:
            raise ValidationError(case.id, "MissingInterruptedTurn", "no machine turn to interrupt")
        penultimate = case.turns[-2]
        if penultimate.role is not Role.SYS or not penultimate.not_finished:
            raise ValidationError(
                case.id,
                "PenultimateTurn",
                "second-to-last turn must be the machine's unfinished reply",
            )
    win = case.annotations.judge.timing_window if case.annotations and case.annotations.judge else None
    if win is not None and win[0] > win[1]:
        raise ValidationError(case.id, "TimingWindow", "window low bound exceeds high bound")
    return case


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


def _template_text(name: str) -> str:
    return resources.files("duplexkit.templates").joinpath(name).read_text(encoding="utf-8")


def render_prompt(template_id: str, params: dict) -> str:
    """Substitute every placeholder of a shipped generation template."""
    try:
        filename = TEMPLATE_FILES[template_id]
    except KeyError:
        raise KeyError(f"unknown template {template_id!r}; choose from {sorted(TEMPLATE_FILES)}") from None
    text = _template_text(filename)

    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in params:
            raise MissingPlaceholder(name)
        return str(params[name])

    return _PLACEHOLDER.sub(sub, text)


# ---------------------------------------------------------------------------
# Transcript parsing (generation output layouts)
# ---------------------------------------------------------------------------

_ROUND = re.compile(r"^round:\s*\S*\s*$", re.IGNORECASE)
_SPEAKER = re.compile(r"^(USER|ASSISTANT|User|Usr|Machine|Sys|Assistant):\s*(.*)$")
_USR_NAMES = {"USER", "User", "Usr"}


@dataclass
class ParsedDialogue:
    """Turns recovered from one generated transcript."""

    turns: list[DialogueTurn]
    has_user_interruption: bool = False


def parse_transcript(text: str) -> ParsedDialogue:
    """Parse a generated transcript in any of the shipped output layouts.

    Understands round-block layouts (``Round:``/``USER:``/``ASSISTANT:``
    with ``---`` separators and an optional ``#### User Interruption``
    tail) and plain speaker-line transcripts. Multi-line turn content is
    folded with single spaces.
    """
    lines = text.splitlines()
    turns: list[DialogueTurn] = []
    has_tail = False
    current_role: Role | None = None
    current: list[str] = []
    saw_round = False
    in_tail = False

    def flush(lineno: int) -> None:
        nonlocal current_role, current
        if current_role is None:
            return
        body = " ".join(part for part in (p.strip() for p in current) if part)
        if not body:
            raise ParseError(lineno, "speaker line with no content")
        turns.append(
            DialogueTurn(current_role, body, not_finished=body.endswith(NOT_FINISHED))
        )
        current_role = None
        current = []

    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#### "):
            flush(lineno)
            if "User Interruption" in line:
                has_tail = True
                in_tail = True
            continue
        if _ROUND.match(line):
            flush(lineno)
            saw_round = True
            continue
        if line == "---":
            flush(lineno)
            continue
        m = _SPEAKER.match(raw)
        if m:
            flush(lineno)
            name, rest = m.group(1), m.group(2)
            current_role = Role.USR if name in _USR_NAMES else Role.SYS
            current = [rest]
            continue
        if current_role is not None:
            current.append(line)
            continue
        raise ParseError(lineno, f"unrecognized content outside any turn: {line[:40]!r}")

    flush(len(lines))
    if not turns:
        raise ParseError(1, "no rounds or speaker lines found")
    if has_tail and in_tail and turns[-1].role is not Role.USR:
        raise ParseError(len(lines), "interruption tail must end with a user line")
    return ParsedDialogue(turns, has_user_interruption=has_tail)


def render_transcript(turns: list[DialogueTurn], user_interruption: bool = False) -> str:
    """Render turns back into the generation output layout.

    The inverse of :func:`parse_transcript` up to whitespace normalization.
    With ``user_interruption`` the final user turn becomes the
    ``#### User Interruption`` tail of the conversations layout.
    """
    lines: list[str] = []
    body = list(turns)
    tail: DialogueTurn | None = None
    if user_interruption:
        if not body or body[-1].role is not Role.USR:
            raise ValueError("an interruption layout needs a final user turn")
        tail = body.pop()
        lines.append("#### Conversations")
    round_no = 1
    i = 0
    while i < len(body):
        lines.append(f"ROUND: {round_no}" if user_interruption else f"Round: {round_no}")
        turn = body[i]
        if turn.role is Role.USR:
            lines.append(f"USER: {turn.text}")
            i += 1
            if i < len(body) and body[i].role is Role.SYS:
                lines.append(f"ASSISTANT: {body[i].text}")
                i += 1
        else:
            lines.append(f"ASSISTANT: {turn.text}")
            i += 1
        lines.append("---")
        round_no += 1
    if lines and lines[-1] == "---":
        lines.pop()
    if tail is not None:
        lines.append("#### User Interruption")
        lines.append(f"USER: {tail.text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Training-sequence markup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingItem:
    kind: str  # "usr" | "ctl" | "sys"
    text: str = ""
    token: ControlToken | None = None


def _ctl(token: ControlToken) -> TrainingItem:
    return TrainingItem("ctl", token.surface, token)


def make_training_sequence(case: DialogueCase) -> list[TrainingItem]:
    """Interleave the case's turns with control tokens in tape order.

    An unfinished user turn waits (continue-listening); a complete user
    turn hands the floor over before the machine's reply; noise and
    affirmation barge-ins keep the machine speaking; every other barge-in
    concedes the floor mid-reply; every finished reply concedes the floor
    back. The result always replays through the state machine from the
    listening state without an invalid transition.
    """
    validate(case)
    items: list[TrainingItem] = []
    speaking = False
    continue_categories = (Category.NOISE, Category.AFFIRM)
    turns = case.turns
    for i, turn in enumerate(turns):
        nxt = turns[i + 1] if i + 1 < len(turns) else None
        if turn.role is Role.USR:
            words = turn.visible_text().split()
            if speaking:
                # Barge-in on an unfinished machine reply.
                keep_floor = case.category in continue_categories and i == len(turns) - 1
                if keep_floor:
                    items.append(TrainingItem("usr", turn.visible_text()))
                    items.append(_ctl(ControlToken.C_SPEAK))
                    if case.annotations and case.annotations.reply_tail:
                        items.append(TrainingItem("sys", case.annotations.reply_tail))
                else:
                    items.append(TrainingItem("usr", words[0]))
                    items.append(_ctl(ControlToken.S_LISTEN))
                    speaking = False
                    if len(words) > 1:
                        items.append(TrainingItem("usr", " ".join(words[1:])))
                continue
            items.append(TrainingItem("usr", turn.visible_text()))
            if turn.not_finished:
                items.append(_ctl(ControlToken.C_LISTEN))
            elif nxt is None:
                items.append(_ctl(ControlToken.S_SPEAK))
                speaking = True
                if case.annotations and case.annotations.reply:
                    items.append(TrainingItem("sys", case.annotations.reply))
            elif nxt.role is Role.USR:
                items.append(_ctl(ControlToken.C_LISTEN))
        else:
            if not speaking:
                items.append(_ctl(ControlToken.S_SPEAK))
                speaking = True
            items.append(TrainingItem("sys", turn.visible_text()))
            if not turn.not_finished:
                items.append(_ctl(ControlToken.S_LISTEN))
                speaking = False
    return items


def render_training_text(items: list[TrainingItem]) -> str:
    """Flatten a training sequence into its markup string."""
    parts = []
    for item in items:
        if item.kind == "usr":
            parts.append(f"<usr>{item.text}")
        else:
            parts.append(item.text)
    return " ".join(parts)
