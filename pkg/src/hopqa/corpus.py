"""Paragraph corpora: the retrievable text units and their JSONL storage.

A corpus is the knowledge base the agent searches. Paragraphs are
immutable records grouped into articles; identity and ordering
invariants are checked once, at construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator


@dataclass(frozen=True)
class Paragraph:
    """One retrievable text unit.

    ``position`` orders paragraphs within their article and is dense
    from 0 per article.
    """

    id: str
    article_id: str
    title: str
    text: str
    position: int

    def __post_init__(self):
        if self.position < 0:
            raise ValueError(f"position must be >= 0, got {self.position}")


def _paragraph_record(p: Paragraph) -> dict:
    return {
        "id": p.id,
        "article_id": p.article_id,
        "title": p.title,
        "text": p.text,
        "position": p.position,
    }


def _canonical_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


class Corpus:
    """Immutable collection of paragraphs with article grouping.

    Construction fails on duplicate paragraph ids and on article
    positions that are not dense from 0.
    """

    def __init__(self, paragraphs: Iterable[Paragraph]):
        self._paragraphs: list[Paragraph] = list(paragraphs)
        self._by_id: dict[str, Paragraph] = {}
        for p in self._paragraphs:
            if p.id in self._by_id:
                raise ValueError(f"duplicate paragraph id: {p.id!r}")
            self._by_id[p.id] = p
        self._by_article: dict[str, list[Paragraph]] = {}
        for p in self._paragraphs:
            self._by_article.setdefault(p.article_id, []).append(p)
        for article_id, paras in self._by_article.items():
            paras.sort(key=lambda p: p.position)
            if [p.position for p in paras] != list(range(len(paras))):
                raise ValueError(
                    f"positions in article {article_id!r} are not dense from 0"
                )

    def __len__(self) -> int:
        return len(self._paragraphs)

    def __iter__(self) -> Iterator[Paragraph]:
        return iter(self._paragraphs)

    def __contains__(self, paragraph_id: str) -> bool:
        return paragraph_id in self._by_id

    def get(self, paragraph_id: str) -> Paragraph:
        if paragraph_id not in self._by_id:
            raise KeyError(f"unknown paragraph id: {paragraph_id!r}")
        return self._by_id[paragraph_id]

    def article(self, article_id: str) -> list[Paragraph]:
        """Paragraphs of one article in position order."""
        if article_id not in self._by_article:
            raise KeyError(f"unknown article id: {article_id!r}")
        return list(self._by_article[article_id])

    def article_ids(self) -> list[str]:
        return list(self._by_article)

    def content_sha256(self) -> str:
        """Hash of the canonical JSONL serialization, in corpus order."""
        h = hashlib.sha256()
        for p in self._paragraphs:
            h.update(_canonical_line(_paragraph_record(p)).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write one JSON object per paragraph, canonical key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus:
            fh.write(_canonical_line(_paragraph_record(p)))
            fh.write("\n")


def load_corpus(path: str | Path) -> Corpus:
    paragraphs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                paragraphs.append(
                    Paragraph(
                        id=rec["id"],
                        article_id=rec["article_id"],
                        title=rec["title"],
                        text=rec["text"],
                        position=int(rec["position"]),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
    return Corpus(paragraphs)
