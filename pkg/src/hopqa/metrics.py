"""Answer and retrieval metrics with the shared normalization rules.

normalize_answer applies, in order: lowercase, strip ASCII punctuation,
drop standalone articles (a, an, the), collapse whitespace, trim. The
token-level F1 works on whitespace tokens of normalized strings as
multisets. All metrics return values in [0, 1].
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .agent import Trace
from .corpus import Corpus

_PUNCT = set(string.punctuation)
_ARTICLES = {"a", "an", "the"}

ADHERENCE_MARKER = "Finish["


def normalize_answer(text: str) -> str:
    """Idempotent normalization shared by every string metric."""
    lowered = text.lower()
    no_punct = "".join(ch for ch in lowered if ch not in _PUNCT)
    tokens = [t for t in no_punct.split() if t not in _ARTICLES]
    return " ".join(tokens)


def _tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def answer_f1(prediction: str, gold: str) -> float:
    """Token-multiset F1 over normalized strings; 0 when either side is
    empty or nothing overlaps."""
    pred = _tokens(prediction)
    gold_t = _tokens(gold)
    if not pred or not gold_t:
        return 0.0
    common = Counter(pred) & Counter(gold_t)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold_t)
    return 2 * precision * recall / (precision + recall)


def answer_em(prediction: str, gold: str) -> int:
    return int(normalize_answer(prediction) == normalize_answer(gold))


def support_recall(trace: Trace, gold_answer: str, corpus: Corpus) -> int:
    """1 iff the normalized gold answer occurs as a substring of any
    retrieved paragraph's normalized text."""
    needle = normalize_answer(gold_answer)
    if not needle:
        return 0
    for pid in set(trace.retrieved_paragraph_ids):
        if needle in normalize_answer(corpus.get(pid).text):
            return 1
    return 0


def paragraph_f1(retrieved_ids: Iterable[str], supporting_ids: Iterable[str]) -> float:
    """Set-level F1 between retrieved and gold supporting paragraph ids."""
    retrieved = set(retrieved_ids)
    supporting = set(supporting_ids)
    if not retrieved or not supporting:
        return 0.0
    overlap = len(retrieved & supporting)
    if overlap == 0:
        return 0.0
    precision = overlap / len(retrieved)
    recall = overlap / len(supporting)
    return 2 * precision * recall / (precision + recall)


def is_adherent(trace: Trace) -> bool:
    return ADHERENCE_MARKER in trace.final_generation


def format_adherence(traces: Sequence[Trace]) -> float:
    """Fraction of traces whose final generation contains "Finish["."""
    if not traces:
        return 0.0
    return sum(1 for t in traces if is_adherent(t)) / len(traces)


@dataclass(frozen=True)
class QuestionScore:
    """Per-question metric row. Incomplete traces score 0 on answer
    metrics but still contribute retrieval metrics."""

    question_id: str
    answer_f1: float
    answer_em: int
    support_recall: int
    paragraph_f1: float
    adherent: bool
    completed: bool


def score_question(trace: Trace, question, corpus: Corpus) -> QuestionScore:
    prediction = trace.final_answer if trace.completed and trace.final_answer else None
    return QuestionScore(
        question_id=question.id,
        answer_f1=answer_f1(prediction, question.gold_answer) if prediction else 0.0,
        answer_em=answer_em(prediction, question.gold_answer) if prediction else 0,
        support_recall=support_recall(trace, question.gold_answer, corpus),
        paragraph_f1=paragraph_f1(
            trace.retrieved_paragraph_ids, question.supporting_paragraph_ids
        ),
        adherent=is_adherent(trace),
        completed=trace.completed,
    )
