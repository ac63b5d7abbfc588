"""Deterministic case builders shared across test modules."""

from __future__ import annotations

import random

from duplexkit.dataset import (
    CaseAnnotations,
    CaseKind,
    Category,
    DialogueCase,
    DialogueTurn,
    JudgeAnnotation,
    NOT_FINISHED,
    Role,
)

_WORDS = (
    "weather library planets recipe garden music travel history science tea "
    "bridge engine window marble signal dolphin meadow copper lantern valley"
).split()


def _sentence(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(n))


def words(prefix: str, n: int) -> str:
    return " ".join(f"{prefix}{i}" for i in range(1, n + 1))


def machine_case(
    case_id: str,
    question_words: int = 8,
    reply_words: int = 12,
    interrupt_after_words: int | None = None,
    silence_chunks: int | None = None,
    history_rounds: int = 0,
    judge: JudgeAnnotation | None = None,
) -> DialogueCase:
    turns = []
    for r in range(history_rounds):
        turns.append(DialogueTurn(Role.USR, words(f"h{r}q", 4)))
        turns.append(DialogueTurn(Role.SYS, words(f"h{r}a", 5)))
    turns.append(DialogueTurn(Role.USR, words("q", question_words)))
    return DialogueCase(
        id=case_id,
        kind=CaseKind.MACHINE_INTERRUPTS_USER,
        turns=turns,
        annotations=CaseAnnotations(
            reply=words("r", reply_words),
            interrupt_after_words=interrupt_after_words,
            silence_chunks=silence_chunks,
            judge=judge,
        ),
    )


def user_case(
    case_id: str,
    category: Category,
    question_words: int = 6,
    visible_reply_words: int = 6,
    tail_words: int = 6,
    interruption_words: int = 4,
    interruption_reply_words: int = 8,
    judge: JudgeAnnotation | None = None,
) -> DialogueCase:
    visible = words("v", visible_reply_words)
    turns = [
        DialogueTurn(Role.USR, words("q", question_words)),
        DialogueTurn(Role.SYS, f"{visible} {NOT_FINISHED}", not_finished=True),
        DialogueTurn(Role.USR, words("i", interruption_words)),
    ]
    needs_reply = category in (Category.DENIAL, Category.SHIFT)
    return DialogueCase(
        id=case_id,
        kind=CaseKind.USER_INTERRUPTS_MACHINE,
        category=category,
        turns=turns,
        annotations=CaseAnnotations(
            reply_tail=words("t", tail_words),
            interruption_reply=words("p", interruption_reply_words) if needs_reply else None,
            judge=judge,
        ),
    )


def random_round_trip_cases(n: int, seed: int = 2024) -> list[DialogueCase]:
    """Synthetic cases for transcript round-trip checks."""
    rng = random.Random(seed)
    cases = []
    for k in range(n):
        if k % 2 == 0:
            turns = []
            for _ in range(rng.randint(1, 3)):
                turns.append(DialogueTurn(Role.USR, _sentence(rng, rng.randint(3, 9))))
                turns.append(DialogueTurn(Role.SYS, _sentence(rng, rng.randint(4, 12))))
            turns.append(DialogueTurn(Role.USR, _sentence(rng, rng.randint(3, 9))))
            cases.append(
                DialogueCase(f"rt-m-{k}", CaseKind.MACHINE_INTERRUPTS_USER, turns)
            )
        else:
            category = rng.choice(list(Category))
            turns = []
            for _ in range(rng.randint(0, 2)):
                turns.append(DialogueTurn(Role.USR, _sentence(rng, rng.randint(3, 8))))
                turns.append(DialogueTurn(Role.SYS, _sentence(rng, rng.randint(4, 10))))
            turns.append(DialogueTurn(Role.USR, _sentence(rng, rng.randint(3, 8))))
            turns.append(
                DialogueTurn(
                    Role.SYS,
                    _sentence(rng, rng.randint(4, 10)) + " " + NOT_FINISHED,
                    not_finished=True,
                )
            )
            turns.append(DialogueTurn(Role.USR, _sentence(rng, rng.randint(2, 6))))
            cases.append(
                DialogueCase(f"rt-u-{k}", CaseKind.USER_INTERRUPTS_MACHINE, turns, category)
            )
    return cases
