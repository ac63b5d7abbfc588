from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duplexkit.dataset import CaseKind, Category
from duplexkit.metrics import (
    EmptyCategory,
    JudgeParseError,
    MissingAnnotation,
    UnjudgedMid,
    build_report,
    judge_records,
    machine_interrupt_metrics,
    parse_judge_output,
    percent_1dp,
    precision_of,
    recall_of,
    render_judge_prompt,
    rule_judge,
    user_interrupt_metrics,
)
from duplexkit.simulator import EmptySample, SimRecord


def rec(
    case_id="c",
    kind=CaseKind.MACHINE_INTERRUPTS_USER,
    classification="machine_mid",
    category=None,
    timing=None,
    content=None,
    fted=None,
    interrupt_word=None,
    window=None,
    keywords=(),
    response="",
):
    return SimRecord(
        case_id=case_id,
        kind=kind,
        category=category,
        config_id=4,
        classification=classification,
        fted_ms=fted,
        interrupt_word=interrupt_word,
        response_text=response,
        history_text="",
        timing_window=window,
        keywords=list(keywords),
        timing_score=timing,
        content_score=content,
    )


class TestFormulaHelpers:
    def test_published_row_precision(self):
        assert abs(precision_of(0.791, 0.388, 0.240) - Fraction("0.547")) < Fraction("0.0005")

    def test_published_row_recall(self):
        assert recall_of(0.372) == Fraction("0.628")

    def test_cautious_row_precision(self):
        assert abs(precision_of(0.956, 0.175, 0.297) - Fraction("0.464")) < Fraction("0.0005")

    @given(
        st.fractions(min_value=0, max_value=1),
        st.fractions(min_value=0, max_value=1),
        st.fractions(min_value=0, max_value=1),
    )
    @settings(max_examples=100, deadline=None)
    def test_identities_on_arbitrary_fractions(self, pir, ir_mid, ir_end):
        assert precision_of(pir, ir_mid, ir_end) == pir * ir_mid + ir_end
        assert recall_of(ir_mid) == 1 - ir_mid

    def test_percent_rounding_half_up(self):
        assert percent_1dp(Fraction(9665, 10000)) == Decimal("96.7")
        assert percent_1dp(Fraction(936, 1000)) == Decimal("93.6")
        assert percent_1dp(Fraction(1, 3)) == Decimal("33.3")
        assert percent_1dp(Fraction(84225, 100000)) == Decimal("84.2")


class TestMachineMetrics:
    def judged_mid(self, i, timing=1, content=1):
        return rec(f"m{i}", classification="machine_mid", timing=timing, content=content)

    def test_partition_and_rates(self):
        records = (
            [self.judged_mid(i) for i in range(2)]
            + [rec(f"e{i}", classification="machine_end") for i in range(3)]
            + [rec(f"n{i}", classification="none") for i in range(5)]
        )
        m = machine_interrupt_metrics(records)
        assert m.ir_mid == Fraction(2, 10)
        assert m.ir_end == Fraction(3, 10)
        assert m.mir == Fraction(5, 10)
        assert m.mir + m.ir_end + m.ir_mid == 1
        assert m.pir_mid == 1
        assert m.precision == Fraction(2, 10) + Fraction(3, 10)
        assert m.recall == Fraction(5, 10)

    def test_zero_interrupts_degenerate(self):
        records = [rec(f"n{i}", classification="none") for i in range(4)]
        m = machine_interrupt_metrics(records)
        assert m.precision == 0
        assert m.recall == 0
        assert m.mir == 1

    def test_unjudged_mid_rejected(self):
        with pytest.raises(UnjudgedMid) as err:
            machine_interrupt_metrics([rec("m0", classification="machine_mid")])
        assert err.value.case_ids == ["m0"]

    def test_end_and_none_need_no_judging(self):
        records = [rec("e0", classification="machine_end"), rec("n0", classification="none")]
        machine_interrupt_metrics(records)

    def test_empty_sample(self):
        with pytest.raises(EmptySample):
            machine_interrupt_metrics([])

    def test_wrong_kind_rejected(self):
        with pytest.raises(ValueError):
            machine_interrupt_metrics(
                [rec(kind=CaseKind.USER_INTERRUPTS_MACHINE, category=Category.NOISE)]
            )

    @given(
        st.integers(min_value=0, max_value=30),
        st.integers(min_value=0, max_value=30),
        st.integers(min_value=0, max_value=30),
    )
    @settings(max_examples=60, deadline=None)
    def test_partition_sums_to_one_exactly(self, mid, end, none):
        total = mid + end + none
        if total == 0:
            return
        records = (
            [rec(f"m{i}", classification="machine_mid", timing=1, content=0) for i in range(mid)]
            + [rec(f"e{i}", classification="machine_end") for i in range(end)]
            + [rec(f"n{i}", classification="none") for i in range(none)]
        )
        m = machine_interrupt_metrics(records)
        assert m.mir + m.ir_end + m.ir_mid == 1
        assert m.precision == m.pir_mid * m.ir_mid + m.ir_end
        assert m.recall == 1 - m.mir


class TestTableTwoOracle:
    """Counts reverse-engineered from published rates reproduce each row's
    composite scores within 0.1 percentage points."""

    ROWS = {
        # (mir, ir_end, ir_mid, pir_mid) per mille; expected precision/recall pct
        "cautious-large": ((528, 297, 175, 0.956), 46.4, 47.2),
        "cautious-small": ((743, 144, 113, 0.911), 24.7, 25.7),
        "eager-base": ((146, 103, 751, 0.361), 37.4, 85.4),
        "duplex-tuned": ((372, 240, 388, 0.791), 54.7, 62.8),
    }

    @pytest.mark.parametrize("name", sorted(ROWS))
    def test_row(self, name):
        (none, end, mid, pir), want_precision, want_recall = self.ROWS[name]
        timing_ones = round(pir * mid)
        records = (
            [
                rec(f"m{i}", classification="machine_mid", timing=1 if i < timing_ones else 0, content=1)
                for i in range(mid)
            ]
            + [rec(f"e{i}", classification="machine_end") for i in range(end)]
            + [rec(f"n{i}", classification="none") for i in range(none)]
        )
        m = machine_interrupt_metrics(records)
        assert abs(float(m.precision) * 100 - want_precision) <= 0.1
        assert abs(float(m.recall) * 100 - want_recall) <= 0.1

    PRR_ROWS = {
        "base-chat": ((852, 1000, 892, 1000), "93.6"),
        "duplex-tuned": ((952, 1000, 919, 995), "96.7"),
        "cautious-large": ((847, 1000, 1000, 1000), "96.2"),
        "cautious-small": ((889, 963, 659, 858), "84.2"),
    }

    @pytest.mark.parametrize("name", sorted(PRR_ROWS))
    def test_prr_rows_unweighted(self, name):
        ones, want = self.PRR_ROWS[name]
        records = []
        for category, k in zip(Category, ones):
            for i in range(1000):
                records.append(
                    rec(
                        f"{category.value}{i}",
                        kind=CaseKind.USER_INTERRUPTS_MACHINE,
                        classification="user_interrupt",
                        category=category,
                        content=1 if i < k else 0,
                    )
                )
        u = user_interrupt_metrics(records)
        assert str(percent_1dp(u.prr_avg)) == want


class TestUserMetrics:
    def test_acceptance_prr_average(self):
        # Category rates 85.2 / 100.0 / 89.2 / 100.0 average to 93.6 exactly.
        ones = {Category.NOISE: 852, Category.DENIAL: 1000, Category.AFFIRM: 892, Category.SHIFT: 1000}
        records = []
        for category, k in ones.items():
            for i in range(1000):
                records.append(
                    rec(
                        f"{category.value}{i}",
                        kind=CaseKind.USER_INTERRUPTS_MACHINE,
                        classification="user_interrupt",
                        category=category,
                        content=1 if i < k else 0,
                    )
                )
        u = user_interrupt_metrics(records)
        assert percent_1dp(u.prr_avg) == Decimal("93.6")
        assert u.prr_avg == Fraction(3744, 4000)

    def test_all_zero_categories(self):
        records = [
            rec(
                f"{c.value}0",
                kind=CaseKind.USER_INTERRUPTS_MACHINE,
                classification="user_interrupt",
                category=c,
                content=0,
            )
            for c in Category
        ]
        assert user_interrupt_metrics(records).prr_avg == 0

    def test_empty_category_is_named(self):
        records = [
            rec(
                "n0",
                kind=CaseKind.USER_INTERRUPTS_MACHINE,
                classification="user_interrupt",
                category=Category.NOISE,
                content=1,
            )
        ]
        with pytest.raises(EmptyCategory) as err:
            user_interrupt_metrics(records)
        assert err.value.name in {c.value for c in Category}

    def test_unjudged_user_record_rejected(self):
        records = [
            rec(
                f"{c.value}0",
                kind=CaseKind.USER_INTERRUPTS_MACHINE,
                classification="user_interrupt",
                category=c,
                content=None,
            )
            for c in Category
        ]
        with pytest.raises(UnjudgedMid):
            user_interrupt_metrics(records)


class TestJudgePrompts:
    def test_machine_prompt_contains_format(self):
        out = render_judge_prompt(CaseKind.MACHINE_INTERRUPTS_USER, "User: hi\nMachine: hello")
        assert "#### Judge" in out
        assert "User: hi\nMachine: hello" in out
        assert "{dialogue_history}" not in out

    def test_user_prompt_contains_task(self):
        out = render_judge_prompt(CaseKind.USER_INTERRUPTS_MACHINE, "history")
        assert "Infer the reason for the user's interruption" in out

    def test_empty_history_renders(self):
        out = render_judge_prompt(CaseKind.MACHINE_INTERRUPTS_USER, "")
        assert "#### Judge" in out


class TestJudgeParsing:
    def test_two_scores(self):
        text = "#### Analysis\nreasoned words\n#### Judge\n1, 0\n"
        assert parse_judge_output(CaseKind.MACHINE_INTERRUPTS_USER, text) == (1, 0)

    def test_single_score(self):
        assert parse_judge_output(CaseKind.USER_INTERRUPTS_MACHINE, "#### Judge\n1") == 1

    def test_fenced_output(self):
        text = "'''\n#### Analysis\nx\n#### Judge\n0, 1\n'''"
        assert parse_judge_output(CaseKind.MACHINE_INTERRUPTS_USER, text) == (0, 1)

    def test_last_judge_heading_wins(self):
        text = "#### Judge\n0, 0\nmore analysis\n#### Judge\n1, 1\n"
        assert parse_judge_output(CaseKind.MACHINE_INTERRUPTS_USER, text) == (1, 1)

    def test_tight_spacing(self):
        assert parse_judge_output(CaseKind.MACHINE_INTERRUPTS_USER, "#### Judge\n1,1") == (1, 1)

    MALFORMED = [
        "no judge section",
        "#### Judge\n",
        "#### Judge\n'''\n",
        "#### Judge\n2, 0",
        "#### Judge\n1, 0, 1",
        "#### Judge\none, zero",
        "#### Judge\n1 0",
        "#### Judge\n-1, 0",
        "#### Judgement\n1, 0",
        "Judge\n1, 0",
    ]

    @pytest.mark.parametrize("text", MALFORMED)
    def test_ten_malformed_variants(self, text):
        with pytest.raises(JudgeParseError):
            parse_judge_output(CaseKind.MACHINE_INTERRUPTS_USER, text)

    def test_user_kind_rejects_two_scores(self):
        with pytest.raises(JudgeParseError):
            parse_judge_output(CaseKind.USER_INTERRUPTS_MACHINE, "#### Judge\n1, 0")

    def test_error_preserves_text(self):
        with pytest.raises(JudgeParseError) as err:
            parse_judge_output(CaseKind.MACHINE_INTERRUPTS_USER, "#### Judge\nbroken")
        assert err.value.text.endswith("broken")


class TestRuleJudge:
    def test_mid_inside_window_scores_timing(self):
        record = rec(
            "m",
            classification="machine_mid",
            interrupt_word=6,
            window=(4, 9),
            keywords=["actually"],
            response="Actually the sun rises in the east",
        )
        assert rule_judge(record) == (1, 1)

    def test_too_early_interruption_fails_timing(self):
        record = rec(
            "m",
            classification="machine_mid",
            interrupt_word=2,
            window=(4, 9),
            keywords=["actually"],
            response="Actually no",
        )
        assert rule_judge(record) == (0, 1)

    def test_content_keywords_all_required(self):
        record = rec(
            "m",
            classification="machine_mid",
            interrupt_word=5,
            window=(4, 9),
            keywords=["continue", "goldfinch"],
            response="let me continue about the story",
        )
        assert rule_judge(record) == (1, 0)

    def test_end_and_none_score_one_by_convention(self):
        assert rule_judge(rec("e", classification="machine_end")) == (1, 1)
        assert rule_judge(rec("n", classification="none")) == (1, 1)

    def test_missing_annotation_raises(self):
        record = rec("m", classification="machine_mid", interrupt_word=5)
        with pytest.raises(MissingAnnotation):
            rule_judge(record)

    def test_user_kind_single_score(self):
        record = rec(
            "u",
            kind=CaseKind.USER_INTERRUPTS_MACHINE,
            classification="user_interrupt",
            category=Category.NOISE,
            keywords=["t1"],
            response="t1 t2 t3",
        )
        assert rule_judge(record) == 1

    def test_judge_records_fills_scores(self):
        records = [
            rec("e", classification="machine_end"),
            rec(
                "u",
                kind=CaseKind.USER_INTERRUPTS_MACHINE,
                classification="user_interrupt",
                category=Category.SHIFT,
                keywords=["p1"],
                response="p1 p2",
            ),
        ]
        judge_records(records)
        assert records[0].timing_score == records[0].content_score == 1
        assert records[1].content_score == 1


class TestReport:
    def test_combined_report_renders(self):
        records = [
            rec("m0", classification="machine_mid", timing=1, content=1, fted=0),
            rec("e0", classification="machine_end", fted=700),
        ]
        for c in Category:
            records.append(
                rec(
                    f"{c.value}0",
                    kind=CaseKind.USER_INTERRUPTS_MACHINE,
                    classification="user_interrupt",
                    category=c,
                    content=1,
                )
            )
        from duplexkit.simulator import aggregate

        report = build_report(records, aggregate([0, 700]))
        table = report.render_table()
        assert "M interrupts U" in table
        assert "U interrupts M" in table
        assert "FTED" in table
        rec_out = report.to_record()
        assert rec_out["machine_interrupts_user"]["precision"]["pct"] == "100.0"
        assert rec_out["user_interrupts_machine"]["prr_avg"]["pct"] == "100.0"
