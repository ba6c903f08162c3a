"""Prompting frameworks: the ReAct tool loop, OneR, and Direct.

The ReAct action grammar is strict; anything else is a format
violation, which stops generation for that question but keeps the
partial trace for retrieval metrics.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .backends import Backend, BackendError, ChatMessage, render_chat
from .decoding import CadConfig, DecoderConfig, generate, require_capabilities
from .index import Bm25Index, lookup, search

log = logging.getLogger(__name__)

TRACE_FORMAT = "trace-v1"

DATASET_NAMES = ("hotpotqa", "2wikimultihopqa", "musique")

# A completed "Action N: ..." line ends the step; everything after the
# newline is discarded.
_ACTION_LINE_STOP = re.compile(r"Action\s+\d+\s*:[^\n]*\n")

_THOUGHT_RE = re.compile(r"^Thought\s+(\d+)\s*:\s*(.*)$")
_ACTION_RE = re.compile(r"^Action\s+(\d+)\s*:\s*(.*)$")
_VERB_RE = re.compile(r"^([A-Za-z]+)\s*\[")

NO_RESULTS = "No results found for {query}."
KEYWORD_NOT_FOUND = "keyword not found"
NO_ARTICLE = "No article to look up; use Search first."
OMITTED_OBSERVATION = "[omitted]"


@dataclass(frozen=True)
class SearchAction:
    query: str


@dataclass(frozen=True)
class LookupAction:
    keyword: str


@dataclass(frozen=True)
class FinishAction:
    answer: str


Action = SearchAction | LookupAction | FinishAction


class FormatViolation(Exception):
    """Model output broke the Thought/Action grammar."""

    def __init__(self, reason: str, message: str | None = None):
        super().__init__(message or reason)
        self.reason = reason


@dataclass
class Step:
    """One executed agent step plus the raw generation that produced it."""

    index: int
    thought: str
    action: Action
    observation: str
    raw_generation: str = ""
    decode_diagnostics: list[dict] = field(default_factory=list)


@dataclass
class Trace:
    """Everything one question produced.

    ``completed`` holds iff a final answer was extracted; for ReAct that
    additionally means the last step's action is Finish. Direct and OneR
    traces have no action steps. ``retrieved_paragraph_ids`` lists the
    paragraphs tool calls returned, in retrieval order.
    """

    question_id: str
    framework: str
    steps: list[Step] = field(default_factory=list)
    completed: bool = False
    final_answer: str | None = None
    retrieved_paragraph_ids: list[str] = field(default_factory=list)
    failure_reason: str | None = None  # format_violation | max_steps | backend_error
    final_generation: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "format": TRACE_FORMAT,
            "question_id": self.question_id,
            "framework": self.framework,
            "completed": self.completed,
            "final_answer": self.final_answer,
            "retrieved_paragraph_ids": list(self.retrieved_paragraph_ids),
            "failure_reason": self.failure_reason,
            "final_generation": self.final_generation,
            "diagnostics": self.diagnostics,
            "steps": [
                {
                    "index": s.index,
                    "thought": s.thought,
                    "action": _action_record(s.action),
                    "observation": s.observation,
                    "raw_generation": s.raw_generation,
                    "decode_diagnostics": s.decode_diagnostics,
                }
                for s in self.steps
            ],
        }


def _action_record(action: Action) -> dict:
    if isinstance(action, SearchAction):
        return {"verb": "Search", "payload": action.query}
    if isinstance(action, LookupAction):
        return {"verb": "Lookup", "payload": action.keyword}
    return {"verb": "Finish", "payload": action.answer}


@dataclass(frozen=True)
class DatasetProfile:
    """Per-dataset prompting rules. Lookup exists only for hotpotqa."""

    name: str
    lookup_enabled: bool
    llama_epilogue: bool = False

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise ValueError(f"unknown dataset: {self.name!r}")
        if self.lookup_enabled and self.name != "hotpotqa":
            raise ValueError("lookup is only available for hotpotqa")


def profile_for(dataset: str, prompt_style: str = "default") -> DatasetProfile:
    if prompt_style not in ("default", "llama"):
        raise ValueError(f"unknown prompt style: {prompt_style!r}")
    return DatasetProfile(
        name=dataset,
        lookup_enabled=(dataset == "hotpotqa"),
        llama_epilogue=(prompt_style == "llama"),
    )


def format_action(action: Action, index: int) -> str:
    rec = _action_record(action)
    return f"Action {index}: {rec['verb']}[{rec['payload']}]"


def _bracket_payload(text: str, open_idx: int) -> tuple[str, int] | None:
    """Payload between balanced brackets starting at ``open_idx``.

    Inner brackets are kept verbatim; returns (payload, index after the
    closing bracket), or None when the brackets never balance.
    """
    depth = 0
    for i in range(open_idx, len(text)):
        if text[i] == "[":
            depth += 1
        elif text[i] == "]":
            depth -= 1
            if depth == 0:
                return text[open_idx + 1 : i], i + 1
    return None


def parse_step(model_output: str, expected_index: int,
               profile: DatasetProfile) -> tuple[str, Action]:
    """Parse one "Thought {i}: ...\\nAction {i}: Verb[payload]" pair.

    Raises FormatViolation with a machine-readable ``reason`` on any
    deviation: missing lines, step index mismatch, unknown verb, Lookup
    when the profile disables it, or an empty payload.
    """
    lines = model_output.strip().split("\n")
    if len(lines) < 2:
        raise FormatViolation("missing_action_line", f"expected two lines, got {len(lines)}")
    if len(lines) > 2:
        raise FormatViolation("extra_lines", f"expected two lines, got {len(lines)}")
    thought_m = _THOUGHT_RE.match(lines[0].strip())
    if not thought_m:
        raise FormatViolation("missing_thought_line", f"bad thought line: {lines[0]!r}")
    action_m = _ACTION_RE.match(lines[1].strip())
    if not action_m:
        raise FormatViolation("missing_action_line", f"bad action line: {lines[1]!r}")
    if int(thought_m.group(1)) != expected_index or int(action_m.group(1)) != expected_index:
        raise FormatViolation(
            "index_mismatch",
            f"expected step {expected_index}, got thought {thought_m.group(1)} / "
            f"action {action_m.group(1)}",
        )
    body = action_m.group(2).strip()
    verb_m = _VERB_RE.match(body)
    if verb_m:
        verb = verb_m.group(1)
    else:
        head = body.split("[")[0].split()
        verb = head[0] if head else ""
    enabled = {"Search", "Finish"} | ({"Lookup"} if profile.lookup_enabled else set())
    if verb not in ("Search", "Lookup", "Finish"):
        raise FormatViolation("unknown_verb", f"unknown verb: {verb!r}")
    if verb == "Lookup" and "Lookup" not in enabled:
        raise FormatViolation("lookup_disabled", "Lookup is disabled for this dataset")
    if not verb_m:
        raise FormatViolation("malformed_action", f"no bracketed payload: {body!r}")
    parsed = _bracket_payload(body, body.index("[", verb_m.end(1)))
    if parsed is None:
        raise FormatViolation("unbalanced_brackets", f"brackets never balance: {body!r}")
    payload, end = parsed
    if body[end:].strip():
        raise FormatViolation("trailing_content", f"content after payload: {body[end:]!r}")
    payload = payload.strip()
    if not payload:
        raise FormatViolation("empty_payload", f"empty payload in: {body!r}")
    thought = thought_m.group(2).strip()
    if verb == "Search":
        return thought, SearchAction(payload)
    if verb == "Lookup":
        return thought, LookupAction(payload)
    return thought, FinishAction(payload)


_ANSWER_RE = re.compile(r"the answer is:\s*([^\n]*)", re.IGNORECASE)
_FINISH_RE = re.compile(r"Finish\s*\[")


def extract_answer(generation: str, framework: str) -> str | None:
    """Pull the final answer out of a raw generation.

    ReAct answers live in the Finish payload; Direct and OneR use the
    "the answer is:" convention, captured to end of line with one
    trailing period stripped. Returns None when nothing matches.
    """
    if framework == "react":
        m = _FINISH_RE.search(generation)
        if not m:
            return None
        parsed = _bracket_payload(generation, m.end() - 1)
        if parsed is None:
            return None
        answer = parsed[0].strip()
        return answer or None
    m = _ANSWER_RE.search(generation)
    if not m:
        return None
    answer = m.group(1).strip()
    if answer.endswith("."):
        answer = answer[:-1]
    answer = answer.strip()
    return answer or None


def _system_message(framework: str, profile: DatasetProfile) -> ChatMessage:
    bundle = prompts.load_bundle(
        framework,
        lookup_enabled=profile.lookup_enabled,
        llama_epilogue=profile.llama_epilogue,
    )
    return ChatMessage("system", prompts.system_prompt(bundle))


def _diag(steps) -> list[dict]:
    return [{"token": s.chosen_token, **s.diagnostics} for s in steps]


def run_react(question, backend: Backend, decoder: DecoderConfig, index: Bm25Index,
              profile: DatasetProfile, *, max_steps: int = 7, retrieval_k: int = 1,
              max_new_tokens: int = 256) -> Trace:
    """Run the Thought/Action/Observation loop for one question.

    Observations are fed back as tool messages; under CAD the
    without-context prompt replaces each observation body with
    "[omitted]" while keeping exemplars and the model's own turns.
    """
    require_capabilities(decoder, backend.capabilities)
    trace = Trace(question_id=question.id, framework="react")
    template = backend.capabilities.chat_template_id
    messages = [_system_message("react", profile),
                ChatMessage("user", f"Question: {question.text}")]
    messages_without = list(messages)
    article_id: str | None = None
    cursor = 0

    for i in range(1, max_steps + 1):
        context = render_chat(messages, template)
        context_without = render_chat(messages_without, template)
        try:
            result = generate(
                backend, decoder, context,
                context_without=context_without,
                stop_re=_ACTION_LINE_STOP,
                max_new_tokens=max_new_tokens,
            )
        except BackendError as exc:
            trace.failure_reason = "backend_error"
            trace.diagnostics["backend_error"] = str(exc)
            return trace
        trace.final_generation = result.text
        try:
            thought, action = parse_step(result.text, i, profile)
        except FormatViolation as exc:
            trace.failure_reason = "format_violation"
            trace.diagnostics["format_violation_reason"] = exc.reason
            return trace

        step = Step(index=i, thought=thought, action=action, observation="",
                    raw_generation=result.text, decode_diagnostics=_diag(result.steps))
        if isinstance(action, FinishAction):
            trace.steps.append(step)
            trace.final_answer = action.answer
            trace.completed = True
            return trace

        if isinstance(action, SearchAction):
            hits = search(index, action.query, k=retrieval_k)
            if hits:
                paragraph = hits[0].paragraph
                trace.retrieved_paragraph_ids.append(paragraph.id)
                article_id = paragraph.article_id
                cursor = 0
                observation = paragraph.text
            else:
                observation = NO_RESULTS.format(query=action.query)
        else:  # Lookup
            if article_id is None:
                observation = NO_ARTICLE
            else:
                found = lookup(index.corpus, article_id, action.keyword, cursor)
                if found:
                    paragraph, cursor = found
                    trace.retrieved_paragraph_ids.append(paragraph.id)
                    observation = paragraph.text
                else:
                    observation = KEYWORD_NOT_FOUND

        step.observation = observation
        trace.steps.append(step)
        generated = result.text.strip()
        messages.append(ChatMessage("assistant", generated))
        messages.append(ChatMessage("tool", f"Observation {i}: {observation}"))
        messages_without.append(ChatMessage("assistant", generated))
        messages_without.append(
            ChatMessage("tool", f"Observation {i}: {OMITTED_OBSERVATION}")
        )

    trace.failure_reason = "max_steps"
    return trace


def run_oner(question, backend: Backend, decoder: DecoderConfig, index: Bm25Index,
             profile: DatasetProfile, *, retrieval_k: int = 1,
             max_new_tokens: int = 256) -> Trace:
    """One retrieval with the question as query, then a single answer turn."""
    require_capabilities(decoder, backend.capabilities)
    trace = Trace(question_id=question.id, framework="oner")
    template = backend.capabilities.chat_template_id
    hits = search(index, question.text, k=retrieval_k)
    system = _system_message("oner", profile)
    if hits:
        paragraph = hits[0].paragraph
        trace.retrieved_paragraph_ids.append(paragraph.id)
        user_with = f"Question: {question.text}\n\nContext: {paragraph.text}"
    else:
        trace.diagnostics["empty_retrieval"] = True
        user_with = f"Question: {question.text}"
    context = render_chat([system, ChatMessage("user", user_with)], template)
    context_without = render_chat(
        [system, ChatMessage("user", f"Question: {question.text}")], template
    )
    return _single_turn(trace, backend, decoder, context, context_without,
                        max_new_tokens, "oner")


def run_direct(question, backend: Backend, decoder: DecoderConfig,
               profile: DatasetProfile, *, max_new_tokens: int = 256) -> Trace:
    """Closed-book single turn. CAD has no context to elide and degrades
    to standard decoding; that degenerate case is logged once per call."""
    require_capabilities(decoder, backend.capabilities)
    trace = Trace(question_id=question.id, framework="direct")
    template = backend.capabilities.chat_template_id
    if isinstance(decoder, CadConfig):
        log.warning("cad under the direct framework degenerates to standard decoding")
        trace.diagnostics["cad_degenerate"] = True
    context = render_chat(
        [_system_message("direct", profile),
         ChatMessage("user", f"Question: {question.text}")],
        template,
    )
    return _single_turn(trace, backend, decoder, context, context,
                        max_new_tokens, "direct")


def _single_turn(trace: Trace, backend: Backend, decoder: DecoderConfig,
                 context: str, context_without: str, max_new_tokens: int,
                 framework: str) -> Trace:
    try:
        result = generate(backend, decoder, context,
                          context_without=context_without,
                          max_new_tokens=max_new_tokens)
    except BackendError as exc:
        trace.failure_reason = "backend_error"
        trace.diagnostics["backend_error"] = str(exc)
        return trace
    trace.final_generation = result.text
    trace.diagnostics["decode_diagnostics"] = _diag(result.steps)
    answer = extract_answer(result.text, framework)
    if answer is None:
        trace.failure_reason = "format_violation"
        trace.diagnostics["format_violation_reason"] = "missing_answer_pattern"
        return trace
    trace.final_answer = answer
    trace.completed = True
    return trace
