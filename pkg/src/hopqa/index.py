"""BM25 inverted index: build, search, in-article lookup, snapshots.

Scoring follows the Lucene / Elasticsearch 7.x formulation. For a query
term t and paragraph d with term frequency tf, document length dl and
average document length avgdl:

    idf(t)      = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
    score(d) +=   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))

with defaults k1 = 1.2 and b = 0.75. No stemming, no stopword removal.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, Paragraph

SNAPSHOT_FORMAT = "bm25-index-v1"

# Unicode alphanumeric runs; underscore is a separator like any other symbol.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric run, dropping empties.

    tokenize("Mon Oncle Benjamin (1969)") == ["mon", "oncle", "benjamin", "1969"]
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class SearchResult:
    paragraph: Paragraph
    score: float


class Bm25Index:
    """Postings plus per-document statistics over one corpus.

    ``postings`` maps term -> list of (paragraph_id, term_frequency) in
    corpus order; ``doc_lengths`` maps paragraph_id -> token count.
    """

    def __init__(self, corpus: Corpus, params: Bm25Params,
                 postings: dict[str, list[tuple[str, int]]],
                 doc_lengths: dict[str, int]):
        self.corpus = corpus
        self.params = params
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.corpus_size = len(doc_lengths)
        self.avg_doc_length = (
            sum(doc_lengths.values()) / self.corpus_size if self.corpus_size else 0.0
        )
        self.corpus_sha256 = corpus.content_sha256()

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = self.corpus_size
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def build_index(corpus: Corpus, params: Bm25Params = Bm25Params()) -> Bm25Index:
    """Index every paragraph of ``corpus``. Deterministic for a given corpus."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for p in corpus:
        tokens = tokenize(p.text)
        doc_lengths[p.id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((p.id, tf))
    return Bm25Index(corpus, params, postings, doc_lengths)


def search(index: Bm25Index, query: str, k: int) -> list[SearchResult]:
    """Top-k paragraphs by BM25 score, ties broken by ascending paragraph id.

    Paragraphs scoring 0 (no query term present) are excluded. An empty
    query after tokenization returns an empty result rather than failing.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    terms = tokenize(query)
    if not terms:
        return []
    k1, b = index.params.k1, index.params.b
    avgdl = index.avg_doc_length
    scores: dict[str, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for pid, tf in plist:
            dl = index.doc_lengths[pid]
            norm = tf + k1 * (1.0 - b + b * dl / avgdl)
            scores[pid] = scores.get(pid, 0.0) + idf * tf * (k1 + 1.0) / norm
    ranked = sorted(
        (pid for pid, s in scores.items() if s > 0.0),
        key=lambda pid: (-scores[pid], pid),
    )
    return [SearchResult(index.corpus.get(pid), scores[pid]) for pid in ranked[:k]]


def _normalized(text: str) -> str:
    return " ".join(tokenize(text))


def lookup(corpus: Corpus, article_id: str, keyword: str,
           cursor: int = 0) -> tuple[Paragraph, int] | None:
    """First paragraph at position >= cursor containing ``keyword``.

    Matching is a case-insensitive substring test over tokenized text
    joined by single spaces. Returns (paragraph, new_cursor) where
    new_cursor = found position + 1, or None when no later paragraph in
    the article matches. Unknown article ids raise KeyError.
    """
    needle = _normalized(keyword)
    for p in corpus.article(article_id):
        if p.position < cursor:
            continue
        if needle and needle in _normalized(p.text):
            return p, p.position + 1
    return None


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Versioned JSON snapshot; the corpus itself is referenced by hash."""
    snapshot = {
        "format": SNAPSHOT_FORMAT,
        "corpus_sha256": index.corpus_sha256,
        "params": {"k1": index.params.k1, "b": index.params.b},
        "corpus_size": index.corpus_size,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": index.doc_lengths,
        "postings": {t: [[pid, tf] for pid, tf in pl] for t, pl in index.postings.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_index(path: str | Path, corpus: Corpus) -> Bm25Index:
    """Load a snapshot, refusing one built from a different corpus."""
    with open(path, encoding="utf-8") as fh:
        snapshot = json.load(fh)
    if snapshot.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"unsupported index snapshot format: {snapshot.get('format')!r}")
    if snapshot["corpus_sha256"] != corpus.content_sha256():
        raise ValueError("index snapshot does not match corpus content hash")
    params = Bm25Params(k1=snapshot["params"]["k1"], b=snapshot["params"]["b"])
    postings = {
        t: [(pid, int(tf)) for pid, tf in pl] for t, pl in snapshot["postings"].items()
    }
    doc_lengths = {pid: int(n) for pid, n in snapshot["doc_lengths"].items()}
    return Bm25Index(corpus, params, postings, doc_lengths)
