"""Interruption-quality metrics, judge prompts, and a deterministic judge.

Rates are computed in exact rational arithmetic and reported as
percentages rounded half-up to one decimal. The machine-interrupt block
partitions sessions into mid-utterance interrupts, end-of-utterance
interrupts, and misses; timing/content quality is judged only for the
mid-utterance ones (the other two answer exactly as a turn-based system
would). Composite scores: precision = pir_mid*ir_mid + ir_end and
recall = 1 - mir.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from importlib import resources

from .dataset import CaseKind, Category
from .simulator import EmptySample, LatencyStats, SimRecord

__all__ = [
    "JudgeParseError",
    "UnjudgedMid",
    "EmptyCategory",
    "MissingAnnotation",
    "precision_of",
    "recall_of",
    "percent_1dp",
    "MachineInterruptMetrics",
    "UserInterruptMetrics",
    "MetricsReport",
    "machine_interrupt_metrics",
    "user_interrupt_metrics",
    "render_judge_prompt",
    "parse_judge_output",
    "rule_judge",
    "judge_records",
    "build_report",
]


class JudgeParseError(Exception):
    """A judge response did not follow the scoring format; the raw text is
    preserved for audit."""

    def __init__(self, message: str, text: str):
        self.text = text
        super().__init__(message)


class UnjudgedMid(Exception):
    def __init__(self, case_ids: list[str]):
        self.case_ids = case_ids
        super().__init__(f"mid-utterance records lack judge scores: {case_ids}")


class EmptyCategory(Exception):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"no records for interruption category {name!r}")


class MissingAnnotation(Exception):
    def __init__(self, case_id: str, what: str):
        self.case_id = case_id
        super().__init__(f"case {case_id!r} lacks the {what} annotation the rule judge needs")


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


def precision_of(pir_mid, ir_mid, ir_end) -> Fraction:
    """Composite floor-taking precision from its three published rates."""
    return _frac(pir_mid) * _frac(ir_mid) + _frac(ir_end)


def recall_of(mir) -> Fraction:
    """Composite floor-taking recall: one minus the missed-interrupt rate."""
    return 1 - _frac(mir)


def percent_1dp(value: Fraction | float) -> Decimal:
    """Exact percentage rounded half-up to one decimal place."""
    value = _frac(value)
    with localcontext() as ctx:
        ctx.prec = 50
        d = Decimal(value.numerator) * 100 / Decimal(value.denominator)
    return d.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MachineInterruptMetrics:
    n: int
    mir: Fraction
    ir_end: Fraction
    ir_mid: Fraction
    pir_mid: Fraction
    prr_mid: Fraction
    precision: Fraction
    recall: Fraction

    def to_record(self) -> dict:
        return {
            "n": self.n,
            **{
                key: {"fraction": str(value), "pct": str(percent_1dp(value))}
                for key, value in (
                    ("mir", self.mir),
                    ("ir_end", self.ir_end),
                    ("ir_mid", self.ir_mid),
                    ("pir_mid", self.pir_mid),
                    ("prr_mid", self.prr_mid),
                    ("precision", self.precision),
                    ("recall", self.recall),
                )
            },
        }


@dataclass(frozen=True)
class UserInterruptMetrics:
    n: int
    prr: dict[Category, Fraction]
    prr_avg: Fraction

    def to_record(self) -> dict:
        rec = {"n": self.n}
        for category in Category:
            value = self.prr[category]
            rec[f"prr_{category.value}"] = {"fraction": str(value), "pct": str(percent_1dp(value))}
        rec["prr_avg"] = {"fraction": str(self.prr_avg), "pct": str(percent_1dp(self.prr_avg))}
        return rec


def machine_interrupt_metrics(records: list[SimRecord]) -> MachineInterruptMetrics:
    """Rates over machine-interrupt sessions; mid records must be judged."""
    if not records:
        raise EmptySample("no machine-interrupt records")
    for record in records:
        if record.kind is not CaseKind.MACHINE_INTERRUPTS_USER:
            raise ValueError(f"record {record.case_id} is not a machine-interrupt session")
    n = len(records)
    mid = [r for r in records if r.classification == "machine_mid"]
    end = [r for r in records if r.classification == "machine_end"]
    none = [r for r in records if r.classification == "none"]
    unjudged = [r.case_id for r in mid if r.timing_score is None or r.content_score is None]
    if unjudged:
        raise UnjudgedMid(unjudged)
    ir_mid = Fraction(len(mid), n)
    ir_end = Fraction(len(end), n)
    mir = Fraction(len(none), n)
    pir_mid = Fraction(sum(r.timing_score for r in mid), len(mid)) if mid else Fraction(0)
    prr_mid = Fraction(sum(r.content_score for r in mid), len(mid)) if mid else Fraction(0)
    return MachineInterruptMetrics(
        n=n,
        mir=mir,
        ir_end=ir_end,
        ir_mid=ir_mid,
        pir_mid=pir_mid,
        prr_mid=prr_mid,
        precision=precision_of(pir_mid, ir_mid, ir_end),
        recall=recall_of(mir),
    )


def user_interrupt_metrics(records: list[SimRecord]) -> UserInterruptMetrics:
    """Per-category proper-response rates and their unweighted mean."""
    if not records:
        raise EmptySample("no user-interrupt records")
    for record in records:
        if record.kind is not CaseKind.USER_INTERRUPTS_MACHINE:
            raise ValueError(f"record {record.case_id} is not a user-interrupt session")
        if record.content_score is None:
            raise UnjudgedMid([record.case_id])
    prr: dict[Category, Fraction] = {}
    for category in Category:
        members = [r for r in records if r.category is category]
        if not members:
            raise EmptyCategory(category.value)
        prr[category] = Fraction(sum(r.content_score for r in members), len(members))
    prr_avg = sum(prr.values(), Fraction(0)) / len(prr)
    return UserInterruptMetrics(n=len(records), prr=prr, prr_avg=prr_avg)


# ---------------------------------------------------------------------------
# Judge prompts and response parsing
# ---------------------------------------------------------------------------

_JUDGE_TEMPLATES = {
    CaseKind.MACHINE_INTERRUPTS_USER: "judge_machine_interrupt.txt",
    CaseKind.USER_INTERRUPTS_MACHINE: "judge_user_interrupt.txt",
}


def render_judge_prompt(kind: CaseKind, dialogue_history: str) -> str:
    name = _JUDGE_TEMPLATES[kind]
    template = resources.files("duplexkit.templates").joinpath(name).read_text("utf-8")
    return template.replace("{dialogue_history}", dialogue_history)


_MACHINE_SCORES = re.compile(r"^\s*([01])\s*,\s*([01])\s*$")
_USER_SCORE = re.compile(r"^\s*([01])\s*$")


def parse_judge_output(kind: CaseKind, text: str) -> tuple[int, int] | int:
    """Extract the score line(s) after the final judge heading.

    Machine-interrupt responses carry two comma-separated binary scores
    (timing, content); user-interrupt responses carry a single content
    score.
    """
    lines = text.splitlines()
    heading = None
    for i, line in enumerate(lines):
        if line.strip().lstrip("#").strip().lower() == "judge" and line.strip().startswith("####"):
            heading = i
    if heading is None:
        raise JudgeParseError("no judge heading found", text)
    for line in lines[heading + 1 :]:
        body = line.strip()
        if not body or body in ("'''", "```"):
            continue
        if kind is CaseKind.MACHINE_INTERRUPTS_USER:
            m = _MACHINE_SCORES.match(body)
            if m:
                return int(m.group(1)), int(m.group(2))
            raise JudgeParseError(f"expected two binary scores, got {body!r}", text)
        m = _USER_SCORE.match(body)
        if m:
            return int(m.group(1))
        raise JudgeParseError(f"expected one binary score, got {body!r}", text)
    raise JudgeParseError("nothing after the judge heading", text)


# ---------------------------------------------------------------------------
# Deterministic rule judge
# ---------------------------------------------------------------------------


def _keywords_match(keywords: list[str], text: str) -> int:
    lowered = text.lower()
    return int(all(k.lower() in lowered for k in keywords))


def rule_judge(record: SimRecord) -> tuple[int, int] | int:
    """Score a record against its fixture annotations.

    Mid-utterance machine interrupts: timing passes when the interruption
    point falls inside the annotated word window, content when every
    annotated keyword appears in the voiced response. End/none records
    answer as a turn-based system would and score 1 by convention.
    User interrupts yield the content score only.
    """
    if record.kind is CaseKind.MACHINE_INTERRUPTS_USER:
        if record.classification in ("machine_end", "none"):
            return 1, 1
        if record.timing_window is None:
            raise MissingAnnotation(record.case_id, "timing window")
        if record.interrupt_word is None:
            raise MissingAnnotation(record.case_id, "interruption point")
        low, high = record.timing_window
        timing = int(low <= record.interrupt_word <= high)
        content = _keywords_match(record.keywords, record.response_text)
        return timing, content
    if not record.keywords:
        raise MissingAnnotation(record.case_id, "response keyword")
    return _keywords_match(record.keywords, record.response_text)


def judge_records(records: list[SimRecord], judge=rule_judge) -> list[SimRecord]:
    """Fill in scores for every record that needs them (in place)."""
    for record in records:
        if record.kind is CaseKind.MACHINE_INTERRUPTS_USER:
            scores = judge(record)
            record.timing_score, record.content_score = scores
        else:
            record.content_score = judge(record)
    return records


# ---------------------------------------------------------------------------
# Combined report
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    machine: MachineInterruptMetrics | None
    user: UserInterruptMetrics | None
    fted: LatencyStats | None

    def to_record(self) -> dict:
        return {
            "machine_interrupts_user": self.machine.to_record() if self.machine else None,
            "user_interrupts_machine": self.user.to_record() if self.user else None,
            "fted": self.fted.to_record() if self.fted else None,
        }

    def render_table(self) -> str:
        lines = []
        if self.machine is not None:
            m = self.machine
            lines.append("M interrupts U (n=%d)" % m.n)
            lines.append("  MIR   ir_end  ir_mid  PIR_mid  PRR_mid  Precision  Recall")
            lines.append(
                "  %-5s %-7s %-7s %-8s %-8s %-10s %s"
                % tuple(
                    str(percent_1dp(v))
                    for v in (m.mir, m.ir_end, m.ir_mid, m.pir_mid, m.prr_mid, m.precision, m.recall)
                )
            )
        if self.user is not None:
            u = self.user
            lines.append("U interrupts M (n=%d)" % u.n)
            lines.append("  PRR_noise  PRR_denial  PRR_affirm  PRR_shift  PRR_avg")
            lines.append(
                "  %-10s %-11s %-11s %-10s %s"
                % (
                    str(percent_1dp(u.prr[Category.NOISE])),
                    str(percent_1dp(u.prr[Category.DENIAL])),
                    str(percent_1dp(u.prr[Category.AFFIRM])),
                    str(percent_1dp(u.prr[Category.SHIFT])),
                    str(percent_1dp(u.prr_avg)),
                )
            )
        if self.fted is not None:
            lines.append("FTED latency (n=%d)" % self.fted.n)
            lines.append("  Avg %d ms | 50%% %d ms | 90%% %d ms" % (
                self.fted.avg_ms, self.fted.p50_ms, self.fted.p90_ms,
            ))
        return "\n".join(lines)


def build_report(records: list[SimRecord], fted: LatencyStats | None = None) -> MetricsReport:
    machine = [r for r in records if r.kind is CaseKind.MACHINE_INTERRUPTS_USER]
    user = [r for r in records if r.kind is CaseKind.USER_INTERRUPTS_MACHINE]
    return MetricsReport(
        machine=machine_interrupt_metrics(machine) if machine else None,
        user=user_interrupt_metrics(user) if user else None,
        fted=fted,
    )
