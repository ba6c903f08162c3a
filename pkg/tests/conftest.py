"""Shared fixture worlds.

Two scripted universes drive most integration tests:

* the magazine world: the two-paragraph corpus behind the bundled
  three-step Search/Search/Finish exemplar, with a script that replays
  it verbatim;
* the curator world: twenty synthetic one-hop questions with script
  entries for every framework, used for matrix / harness / CLI tests.

Both are built from plain functions so the acceptance tests can
construct fresh copies with their own timing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

import pytest

from hopqa import (
    Bm25Params,
    CadConfig,
    Corpus,
    DecoreConfig,
    DolaConfig,
    Paragraph,
    Question,
    ScriptedBackend,
    StandardConfig,
    build_index,
)
from hopqa.backends import ScriptEntry
from hopqa.index import Bm25Index


def toy_paragraphs() -> list[Paragraph]:
    """Three tiny documents with hand-computed scores: d1 "cat sat", d2 "cat cat dog", d3 "dog runs fast"."""
    texts = {"d1": "cat sat", "d2": "cat cat dog", "d3": "dog runs fast"}
    return [
        Paragraph(id=pid, article_id=pid, title=pid.upper(), text=text, position=0)
        for pid, text in sorted(texts.items())
    ]


@pytest.fixture
def toy_index() -> Bm25Index:
    return build_index(Corpus(toy_paragraphs()), Bm25Params())


@dataclass
class MagazineWorld:
    corpus: Corpus
    index: Bm25Index
    question: Question
    entries: list[ScriptEntry]
    observations: dict[int, str]
    step_texts: dict[int, str]

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(self.entries)


def build_magazine_world() -> MagazineWorld:
    """World for replaying the bundled three-step exemplar.

    The corpus paragraphs are the exemplar's two observation bodies, so
    a faithful agent run reproduces the exemplar byte for byte.
    """
    asset = (resources.files("hopqa.prompts") / "assets" / "react_examples.txt").read_text(
        encoding="utf-8"
    )
    lines = asset.strip().split("\n")
    question_text = lines[0][len("Question: "):]
    observations = {int(n): text for n, text in re.findall(r"Observation (\d+): (.*)", asset)}
    step_texts = {}
    for i in (1, 2, 3):
        thought = next(l for l in lines if l.startswith(f"Thought {i}:"))
        action = next(l for l in lines if l.startswith(f"Action {i}:"))
        step_texts[i] = f"{thought}\n{action}"

    corpus = Corpus([
        Paragraph(id="bigpicture", article_id="bigpicture",
                  title="Big Picture (Magazine)", text=observations[1], position=0),
        Paragraph(id="wellcome_trust", article_id="wellcome_trust",
                  title="Wellcome Trust", text=observations[2], position=0),
    ])
    entries = [
        ScriptEntry(suffix=f"Question: {question_text}", completion=step_texts[1]),
        ScriptEntry(suffix=observations[1], completion=step_texts[2]),
        ScriptEntry(suffix=observations[2], completion=step_texts[3]),
    ]
    question = Question(
        id="magazine-founder",
        text=question_text,
        gold_answer="Sir Henry Wellcome",
        supporting_paragraph_ids=("bigpicture", "wellcome_trust"),
    )
    return MagazineWorld(
        corpus=corpus,
        index=build_index(corpus, Bm25Params()),
        question=question,
        entries=entries,
        observations=observations,
        step_texts=step_texts,
    )


@pytest.fixture
def magazine_world() -> MagazineWorld:
    return build_magazine_world()


@dataclass
class CuratorWorld:
    questions: list[Question]
    corpus: Corpus
    index: Bm25Index
    entries: list[ScriptEntry]

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(self.entries)

    def decoders(self):
        return [
            StandardConfig(),
            CadConfig(alpha=1.0),
            DolaConfig(candidate_layers=(0,)),
            DecoreConfig(retrieval_heads=((0, 0),)),
        ]


def build_curator_world(n: int = 20) -> CuratorWorld:
    """Twenty one-hop questions with full scripts for all three frameworks.

    Entry order per question resolves prompt ambiguity: the two answer
    frameworks share the "Question: ..." context tail, so the one-step
    retrieval entries are keyed on their instructions text and the bare
    question entry comes last. Canned completions are identical between
    the with-context and elided-context variants, so contrastive
    decoders see zero contrast and every strategy traces identically.
    """
    paragraphs, questions, entries = [], [], []
    for i in range(n):
        entity, curator = f"Entity{i}", f"Curator{i}"
        text = f"{entity} is curated by {curator}."
        paragraphs.append(Paragraph(id=f"p{i}", article_id=f"a{i}",
                                    title=entity, text=text, position=0))
        questions.append(Question(id=f"q{i}", text=f"Who curates {entity}?",
                                  gold_answer=curator,
                                  supporting_paragraph_ids=(f"p{i}",)))
        react1 = f"Thought 1: I need to search {entity}.\nAction 1: Search[{entity}]"
        react2 = (f"Thought 2: {entity} is curated by {curator}, "
                  f"so the answer is {curator}.\nAction 2: Finish[{curator}]")
        answer = f"The answer is: {curator}."
        entries += [
            ScriptEntry(contains=f"Action 1: Search[{entity}]",
                        suffix=f"Observation 1: {text}", completion=react2),
            ScriptEntry(contains=f"Action 1: Search[{entity}]",
                        suffix="Observation 1: [omitted]", completion=react2),
            ScriptEntry(contains="interleaving Thought",
                        suffix=f"Question: Who curates {entity}?", completion=react1),
            ScriptEntry(suffix=f"Context: {text}", completion=answer),
            ScriptEntry(contains="You may get some context",
                        suffix=f"Question: Who curates {entity}?", completion=answer),
            ScriptEntry(suffix=f"Question: Who curates {entity}?", completion=answer),
        ]
    corpus = Corpus(paragraphs)
    return CuratorWorld(
        questions=questions,
        corpus=corpus,
        index=build_index(corpus, Bm25Params()),
        entries=entries,
    )


@pytest.fixture
def curator_world() -> CuratorWorld:
    return build_curator_world()


def write_curator_script(world: CuratorWorld, path) -> None:
    """Persist the curator world's script in the mock-script file format."""
    record = {
        "format": "mock-script-v1",
        "entries": [
            {
                key: value
                for key, value in (
                    ("contains", e.contains),
                    ("suffix", e.suffix),
                    ("completion", e.completion),
                )
                if value is not None
            }
            for e in world.entries
        ],
    }
    path.write_text(json.dumps(record, ensure_ascii=False, indent=1), encoding="utf-8")
