"""Dataset loaders, knowledge-base construction, and seeded sampling.

Field maps per dataset:

hotpotqa
    questions: JSON array (or JSONL) of records with _id/id, question,
        answer, supporting_facts: [[title, sentence_idx], ...]
    wiki: JSONL of articles {"title": ..., "text": ...} where text is a
        string (one paragraph), a list of paragraph strings, or a list
        of sentence lists (each joined into one paragraph). The corpus
        is the wiki dump; supporting facts map to the first paragraph
        of the named article.

2wikimultihopqa
    questions: JSON array (or JSONL) of records with _id/id, question,
        answer, context: [[title, [sentence, ...]], ...],
        supporting_facts: [[title, sentence_idx], ...]
    The corpus is the deduplicated union of every context paragraph.

musique
    questions: JSONL of records with id, question, answer, optional
        answerable, paragraphs: [{title, paragraph_text, is_supporting}]
    The corpus is the deduplicated union of every paragraph.
    Unanswerable records are retained and scored like any other.

Paragraph identity is a hash of (normalized article title, position),
so ids are stable across re-downloads of the same data. For union-built
corpora, positions number an article's distinct paragraph texts in
lexicographic order, which makes construction order-independent.
"""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import Corpus, Paragraph

DATASET_KINDS = ("hotpotqa", "2wikimultihopqa", "musique")

QUESTIONS_FORMAT = "questions-v1"


class SchemaError(ValueError):
    """An input record does not match the documented field map."""


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answer: str
    supporting_paragraph_ids: tuple[str, ...]
    answerable: bool = True
    hop_count: int | None = None

    def __post_init__(self):
        if self.answerable and not self.gold_answer:
            raise ValueError(f"question {self.id!r}: empty gold answer but answerable")


@dataclass(frozen=True)
class SamplePlan:
    size: int
    seed: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"sample size must be >= 1, got {self.size}")


def normalize_title(title: str) -> str:
    return " ".join(unicodedata.normalize("NFC", title).split())


def paragraph_id(title: str, position: int) -> str:
    key = f"{normalize_title(title)}\x1f{position}".encode("utf-8")
    return hashlib.sha256(key).hexdigest()[:16]


def _load_records(path: str | Path) -> list[dict]:
    """JSON array or JSONL, decided by the first non-space byte."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        records = json.loads(text)
        if not isinstance(records, list):
            raise SchemaError(f"{path}: expected a JSON array")
        return records
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: bad JSON: {exc}") from exc
    return records


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SchemaError(f"{where}: missing field {key!r}")
    return record[key]


def _record_id(record: dict, where: str) -> str:
    for key in ("_id", "id"):
        if key in record:
            return str(record[key])
    raise SchemaError(f"{where}: missing record id")


def _union_corpus(paragraph_texts: Iterable[tuple[str, str]]) -> Corpus:
    """Deduplicated union of (title, text) pairs, order-independent.

    Distinct texts of one article get positions by sorted text, and the
    corpus is ordered by (article, position), so the same set of pairs
    yields a byte-identical corpus no matter the input order.
    """
    by_article: dict[str, set[str]] = {}
    for title, text in paragraph_texts:
        by_article.setdefault(normalize_title(title), set()).add(text)
    paragraphs = []
    for title in sorted(by_article):
        for position, text in enumerate(sorted(by_article[title])):
            paragraphs.append(
                Paragraph(
                    id=paragraph_id(title, position),
                    article_id=title,
                    title=title,
                    text=text,
                    position=position,
                )
            )
    _check_id_collisions(paragraphs)
    return Corpus(paragraphs)


def _check_id_collisions(paragraphs: list[Paragraph]) -> None:
    seen: dict[str, Paragraph] = {}
    for p in paragraphs:
        other = seen.get(p.id)
        if other is not None:
            raise SchemaError(
                f"paragraph id collision: {p.id!r} for "
                f"({other.title!r}, {other.position}) and ({p.title!r}, {p.position})"
            )
        seen[p.id] = p


def _context_paragraphs(record: dict, where: str) -> list[tuple[str, str]]:
    pairs = []
    for entry in _require(record, "context", where):
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise SchemaError(f"{where}: context entry must be [title, sentences]")
        title, sentences = entry
        text = " ".join(s.strip() for s in sentences).strip()
        if text:
            pairs.append((str(title), text))
    return pairs


def _pair_ids(corpus: Corpus) -> dict[tuple[str, str], str]:
    return {(p.article_id, p.text): p.id for p in corpus}


def _load_2wiki(files: Mapping[str, str | Path]) -> tuple[list[Question], Corpus]:
    path = files["questions"]
    records = _load_records(path)
    all_pairs: list[tuple[str, str]] = []
    for i, rec in enumerate(records):
        all_pairs.extend(_context_paragraphs(rec, f"{path}[{i}]"))
    corpus = _union_corpus(all_pairs)
    pair_ids = _pair_ids(corpus)

    questions = []
    for i, rec in enumerate(records):
        where = f"{path}[{i}]"
        qid = _record_id(rec, where)
        pairs = _context_paragraphs(rec, where)
        by_title: dict[str, list[str]] = {}
        for title, text in pairs:
            by_title.setdefault(normalize_title(title), []).append(text)
        supporting: set[str] = set()
        for fact in _require(rec, "supporting_facts", where):
            title = normalize_title(str(fact[0]))
            texts = by_title.get(title)
            if not texts:
                raise SchemaError(
                    f"{where}: supporting title {title!r} not in this record's context"
                )
            supporting.update(pair_ids[(title, text)] for text in texts)
        questions.append(
            Question(
                id=qid,
                text=str(_require(rec, "question", where)),
                gold_answer=str(_require(rec, "answer", where)),
                supporting_paragraph_ids=tuple(sorted(supporting)),
            )
        )
    _check_questions(questions, corpus, path)
    return questions, corpus


def _load_musique(files: Mapping[str, str | Path]) -> tuple[list[Question], Corpus]:
    path = files["questions"]
    records = _load_records(path)
    all_pairs: list[tuple[str, str]] = []
    for i, rec in enumerate(records):
        where = f"{path}[{i}]"
        for para in _require(rec, "paragraphs", where):
            text = str(_require(para, "paragraph_text", where)).strip()
            if text:
                all_pairs.append((str(_require(para, "title", where)), text))
    corpus = _union_corpus(all_pairs)
    pair_ids = _pair_ids(corpus)

    questions = []
    for i, rec in enumerate(records):
        where = f"{path}[{i}]"
        qid = _record_id(rec, where)
        supporting: set[str] = set()
        for para in rec["paragraphs"]:
            if not para.get("is_supporting"):
                continue
            title = normalize_title(str(para["title"]))
            text = str(para["paragraph_text"]).strip()
            supporting.add(pair_ids[(title, text)])
        hop_m = re.match(r"(\d+)hop", qid)
        questions.append(
            Question(
                id=qid,
                text=str(_require(rec, "question", where)),
                gold_answer=str(rec.get("answer", "")),
                supporting_paragraph_ids=tuple(sorted(supporting)),
                answerable=bool(rec.get("answerable", True)),
                hop_count=int(hop_m.group(1)) if hop_m else None,
            )
        )
    _check_questions(questions, corpus, path)
    return questions, corpus


def _wiki_paragraphs(record: dict, where: str) -> list[str]:
    text = _require(record, "text", where)
    if isinstance(text, str):
        candidates = [text]
    elif isinstance(text, list):
        candidates = [
            " ".join(s.strip() for s in item).strip() if isinstance(item, list) else str(item)
            for item in text
        ]
    else:
        raise SchemaError(f"{where}: text must be a string or list")
    return [t.strip() for t in candidates if t and t.strip()]


def _load_hotpotqa(files: Mapping[str, str | Path]) -> tuple[list[Question], Corpus]:
    wiki_path = files["wiki"]
    paragraphs = []
    for i, rec in enumerate(_load_records(wiki_path)):
        where = f"{wiki_path}[{i}]"
        title = normalize_title(str(_require(rec, "title", where)))
        for position, text in enumerate(_wiki_paragraphs(rec, where)):
            paragraphs.append(
                Paragraph(
                    id=paragraph_id(title, position),
                    article_id=title,
                    title=title,
                    text=text,
                    position=position,
                )
            )
    _check_id_collisions(paragraphs)
    corpus = Corpus(paragraphs)

    path = files["questions"]
    questions = []
    for i, rec in enumerate(_load_records(path)):
        where = f"{path}[{i}]"
        qid = _record_id(rec, where)
        supporting: set[str] = set()
        for fact in _require(rec, "supporting_facts", where):
            title = normalize_title(str(fact[0]))
            # The retrieval unit is the article's lead paragraph.
            pid = paragraph_id(title, 0)
            if pid not in corpus:
                raise SchemaError(
                    f"{where}: supporting article {title!r} missing from the wiki corpus"
                )
            supporting.add(pid)
        questions.append(
            Question(
                id=qid,
                text=str(_require(rec, "question", where)),
                gold_answer=str(_require(rec, "answer", where)),
                supporting_paragraph_ids=tuple(sorted(supporting)),
            )
        )
    _check_questions(questions, corpus, path)
    return questions, corpus


def _check_questions(questions: list[Question], corpus: Corpus, path) -> None:
    seen = set()
    for q in questions:
        if q.id in seen:
            raise SchemaError(f"{path}: duplicate question id {q.id!r}")
        seen.add(q.id)
        for pid in q.supporting_paragraph_ids:
            if pid not in corpus:
                raise SchemaError(
                    f"{path}: question {q.id!r} references missing paragraph {pid!r}"
                )


_LOADERS = {
    "hotpotqa": (_load_hotpotqa, ("questions", "wiki")),
    "2wikimultihopqa": (_load_2wiki, ("questions",)),
    "musique": (_load_musique, ("questions",)),
}


def load_dataset(kind: str, files: Mapping[str, str | Path]) -> tuple[list[Question], Corpus]:
    """Load raw dataset files into (questions, knowledge base)."""
    if kind not in _LOADERS:
        raise SchemaError(f"unknown dataset kind: {kind!r}")
    loader, required = _LOADERS[kind]
    missing = [name for name in required if name not in files]
    if missing:
        raise SchemaError(f"dataset {kind!r} needs files: {missing}")
    return loader(files)


def _sample_key(seed: int, question_id: str) -> str:
    return hashlib.sha256(f"{seed}:{question_id}".encode("utf-8")).hexdigest()


def sample_test_set(questions: list[Question], plan: SamplePlan) -> list[Question]:
    """Deterministic subset without replacement, in original dataset order.

    The pinned algorithm: key each question id by
    sha256("{seed}:{id}") hex, select the plan.size smallest
    (key, id) pairs, and return the selected questions in their
    original order. No platform RNG is involved, so any implementation
    of this rule reproduces the same subset.
    """
    if plan.size > len(questions):
        raise ValueError(
            f"sample size {plan.size} exceeds population {len(questions)}"
        )
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        raise ValueError("question ids must be unique to sample")
    keyed = sorted(ids, key=lambda qid: (_sample_key(plan.seed, qid), qid))
    chosen = set(keyed[: plan.size])
    return [q for q in questions if q.id in chosen]


def save_questions(questions: list[Question], path: str | Path) -> None:
    """One JSON object per question, canonical key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            record = {
                "id": q.id,
                "text": q.text,
                "gold_answer": q.gold_answer,
                "supporting_paragraph_ids": list(q.supporting_paragraph_ids),
                "answerable": q.answerable,
            }
            if q.hop_count is not None:
                record["hop_count"] = q.hop_count
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True,
                                separators=(",", ":")))
            fh.write("\n")


def load_questions(path: str | Path) -> list[Question]:
    questions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                questions.append(
                    Question(
                        id=rec["id"],
                        text=rec["text"],
                        gold_answer=rec["gold_answer"],
                        supporting_paragraph_ids=tuple(rec["supporting_paragraph_ids"]),
                        answerable=bool(rec.get("answerable", True)),
                        hop_count=rec.get("hop_count"),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad question record: {exc}") from exc
    return questions
