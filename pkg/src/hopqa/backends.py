"""Language-model backends: capabilities, chat rendering, mock, remote client.

Backends own their tokenizer; the engine deals in strings, token ids it
gets back from decoding, and the backend's id->text mapping. All logit
vectors are float64 numpy arrays of exactly ``vocab_size`` finite values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class BackendError(Exception):
    """Base class for backend failures."""


class CapabilityError(BackendError):
    """A request needs a capability the backend does not advertise."""


class NoScriptError(BackendError):
    """The scripted mock saw a context no script entry matches."""


class TransportError(BackendError):
    """Remote backend failure; ``retryable`` mirrors the wire flag."""

    def __init__(self, message: str, retryable: bool):
        super().__init__(message)
        self.retryable = retryable


class InvalidConversationError(ValueError):
    """Message list violates role ordering rules."""


ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class BackendCapabilities:
    vocab_size: int
    num_layers: int
    layer_logits: bool
    head_masking: bool
    chat_template_id: str

    def __post_init__(self):
        if self.vocab_size <= 1:
            raise ValueError(f"vocab_size must be > 1, got {self.vocab_size}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role: {self.role!r}")


@dataclass(frozen=True)
class LogitsRequest:
    """One next-token logits query.

    ``want_layers`` asks for intermediate-layer logits (requires the
    layer_logits capability); ``masked_heads`` asks for a forward pass
    with the given (layer, head) attention heads suppressed (requires
    head_masking).
    """

    context: str
    want_layers: tuple[int, ...] = ()
    masked_heads: tuple[tuple[int, int], ...] = ()


@dataclass
class LogitsResponse:
    final: np.ndarray
    per_layer: dict[int, np.ndarray] = field(default_factory=dict)


def as_logits(values, vocab_size: int) -> np.ndarray:
    """Validate and convert one logit vector: finite floats, length V."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != vocab_size:
        raise ValueError(f"logit vector must have length {vocab_size}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logit vector contains non-finite values")
    return arr


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax; invariant under constant shifts."""
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def validate_conversation(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise InvalidConversationError("conversation is empty")
    if messages[0].role not in ("system", "user"):
        raise InvalidConversationError(
            f"conversation must begin with system or user, got {messages[0].role!r}"
        )
    for i, msg in enumerate(messages):
        if i > 0 and msg.role == "system":
            raise InvalidConversationError("system message allowed only first")
        if i > 0 and msg.role == "assistant" and messages[i - 1].role == "assistant":
            raise InvalidConversationError("two consecutive assistant messages")


def _render_plain(messages: Sequence[ChatMessage]) -> str:
    return "\n\n".join(m.content for m in messages) + "\n"


def _render_tagged(messages: Sequence[ChatMessage]) -> str:
    return "".join(f"<|{m.role}|>\n{m.content}\n<|end|>\n" for m in messages)


_TEMPLATES = {"plain": _render_plain, "tagged": _render_tagged}


def render_chat(messages: Sequence[ChatMessage], template_id: str) -> str:
    """Render a conversation to a single prompt string.

    "plain" joins message contents with blank lines; "tagged" wraps each
    message in <|role|> ... <|end|> delimiters.
    """
    if template_id not in _TEMPLATES:
        raise ValueError(f"unknown chat template: {template_id!r}")
    validate_conversation(messages)
    return _TEMPLATES[template_id](messages)


class Backend:
    """Interface shared by the scripted mock and the remote client."""

    capabilities: BackendCapabilities
    eos_token_id: int | None
    shareable: bool

    def next_logits(self, request: LogitsRequest) -> LogitsResponse:
        raise NotImplementedError

    def token_text(self, token_id: int) -> str:
        raise NotImplementedError


def _check_request(request: LogitsRequest, caps: BackendCapabilities) -> None:
    if request.want_layers and not caps.layer_logits:
        raise CapabilityError("backend does not support layer_logits")
    if request.masked_heads and not caps.head_masking:
        raise CapabilityError("backend does not support head_masking")
    for layer in request.want_layers:
        if not 0 <= layer <= caps.num_layers:
            raise ValueError(f"want_layers entry {layer} outside [0, {caps.num_layers}]")
    for layer, head in request.masked_heads:
        if not 0 <= layer < caps.num_layers:
            raise ValueError(f"masked head layer {layer} outside [0, {caps.num_layers})")
        if head < 0:
            raise ValueError(f"masked head index must be >= 0, got {head}")


@dataclass(frozen=True)
class ScriptEntry:
    """One (pattern, behaviour) rule of the scripted mock.

    Matching: ``suffix`` must end the context (ignoring trailing
    whitespace) and ``contains`` must occur anywhere in it; both are
    literal strings and both must hold when given. Behaviour is either a
    canned ``completion`` (emitted as one vocabulary token, then EOS) or
    an explicit logit table (``final``, optional per-layer ``layers``,
    optional ``masked`` table used when heads are masked).
    """

    contains: str | None = None
    suffix: str | None = None
    completion: str | None = None
    final: tuple[float, ...] | None = None
    layers: tuple[tuple[int, tuple[float, ...]], ...] = ()
    masked: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.contains is None and self.suffix is None:
            raise ValueError("script entry needs a contains or suffix pattern")
        if (self.completion is None) == (self.final is None):
            raise ValueError("script entry needs exactly one of completion or final")


EOS_TOKEN = "<eos>"


class ScriptedBackend(Backend):
    """Deterministic mock: an ordered script of pattern -> behaviour rules.

    First matching entry wins. A context matching no entry raises
    NoScriptError; there is no silent fallback. The mock's vocabulary is
    explicit, or derived as EOS plus the sorted set of completions.
    """

    def __init__(self, entries: Sequence[ScriptEntry],
                 vocab: Sequence[str] | None = None,
                 capabilities: BackendCapabilities | None = None):
        self.entries = list(entries)
        completions = [e.completion for e in self.entries if e.completion is not None]
        if vocab is None:
            if any(e.final is not None for e in self.entries):
                raise ValueError("explicit vocab required when the script has logit tables")
            vocab = [EOS_TOKEN] + sorted(set(completions))
        else:
            vocab = list(vocab)
            if EOS_TOKEN not in vocab:
                vocab = [EOS_TOKEN] + vocab
            missing = sorted(set(completions) - set(vocab))
            vocab.extend(missing)
        self.vocab = vocab
        self._token_ids = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self._token_ids) != len(self.vocab):
            raise ValueError("mock vocabulary has duplicate tokens")
        self.eos_token_id = self.vocab.index(EOS_TOKEN)
        caps = capabilities or BackendCapabilities(
            vocab_size=len(self.vocab),
            num_layers=4,
            layer_logits=True,
            head_masking=True,
            chat_template_id="plain",
        )
        if caps.vocab_size != len(self.vocab):
            caps = BackendCapabilities(
                vocab_size=len(self.vocab),
                num_layers=caps.num_layers,
                layer_logits=caps.layer_logits,
                head_masking=caps.head_masking,
                chat_template_id=caps.chat_template_id,
            )
        self.capabilities = caps
        for e in self.entries:
            for table in [e.final, e.masked] + [t for _, t in e.layers]:
                if table is not None and len(table) != len(self.vocab):
                    raise ValueError(
                        f"script table length {len(table)} != vocab size {len(self.vocab)}"
                    )
        self.shareable = True
        self.request_count = 0

    def token_text(self, token_id: int) -> str:
        return self.vocab[token_id]

    def _one_hot(self, token_id: int) -> np.ndarray:
        arr = np.zeros(len(self.vocab), dtype=np.float64)
        arr[token_id] = 10.0
        return arr

    def next_logits(self, request: LogitsRequest) -> LogitsResponse:
        self.request_count += 1
        _check_request(request, self.capabilities)
        ctx = request.context
        stripped = ctx.rstrip()
        for entry in self.entries:
            # A canned completion already emitted in full yields EOS next.
            if entry.completion is not None and ctx.endswith(entry.completion):
                return self._respond_token(self.eos_token_id, request)
            if entry.suffix is not None and not stripped.endswith(entry.suffix):
                continue
            if entry.contains is not None and entry.contains not in ctx:
                continue
            if entry.completion is not None:
                return self._respond_token(self._token_ids[entry.completion], request)
            return self._respond_table(entry, request)
        tail = ctx[-120:]
        raise NoScriptError(f"no script entry matches context ending: {tail!r}")

    def _respond_token(self, token_id: int, request: LogitsRequest) -> LogitsResponse:
        final = self._one_hot(token_id)
        per_layer = {layer: final.copy() for layer in request.want_layers}
        return LogitsResponse(final=final, per_layer=per_layer)

    def _respond_table(self, entry: ScriptEntry, request: LogitsRequest) -> LogitsResponse:
        v = len(self.vocab)
        base = entry.final
        if request.masked_heads and entry.masked is not None:
            base = entry.masked
        final = as_logits(base, v)
        layer_tables = dict(entry.layers)
        per_layer = {}
        for layer in request.want_layers:
            table = layer_tables.get(layer)
            per_layer[layer] = as_logits(table, v) if table is not None else final.copy()
        return LogitsResponse(final=final, per_layer=per_layer)


def _entry_from_dict(rec: dict, where: str) -> ScriptEntry:
    known = {"contains", "suffix", "completion", "final", "layers", "masked"}
    unknown = set(rec) - known
    if unknown:
        raise ValueError(f"{where}: unknown script entry keys: {sorted(unknown)}")
    layers = tuple(
        (int(k), tuple(float(x) for x in v)) for k, v in rec.get("layers", {}).items()
    )
    return ScriptEntry(
        contains=rec.get("contains"),
        suffix=rec.get("suffix"),
        completion=rec.get("completion"),
        final=tuple(float(x) for x in rec["final"]) if "final" in rec else None,
        layers=layers,
        masked=tuple(float(x) for x in rec["masked"]) if "masked" in rec else None,
    )


def load_script(path: str | Path) -> ScriptedBackend:
    """Build a ScriptedBackend from a mock-script-v1 JSON file."""
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if spec.get("format") != "mock-script-v1":
        raise ValueError(f"unsupported mock script format: {spec.get('format')!r}")
    entries = [
        _entry_from_dict(rec, f"{path}: entry {i}")
        for i, rec in enumerate(spec.get("entries", []))
    ]
    caps = None
    if "capabilities" in spec:
        c = spec["capabilities"]
        vocab_size = len(spec["vocab"]) if "vocab" in spec else 2
        caps = BackendCapabilities(
            vocab_size=c.get("vocab_size", vocab_size),
            num_layers=c.get("num_layers", 4),
            layer_logits=c.get("layer_logits", True),
            head_masking=c.get("head_masking", True),
            chat_template_id=c.get("chat_template_id", "plain"),
        )
    return ScriptedBackend(entries, vocab=spec.get("vocab"), capabilities=caps)


_CAP_FIELDS = ("vocab_size", "num_layers", "layer_logits", "head_masking", "chat_template_id")


class RemoteBackend(Backend):
    """HTTP client for the logits wire protocol.

    GET /capabilities and POST /logits are the protocol surface; token
    text is fetched lazily from the additive GET /vocab endpoint and is
    only needed when generating. Remote backends are treated as a single
    generation stream (``shareable`` is False).
    """

    def __init__(self, base_url: str, timeout: float = 30.0, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()
        self.shareable = False
        self._vocab: list[str] | None = None
        self.eos_token_id: int | None = None
        payload = self._get("/capabilities")
        missing = [k for k in _CAP_FIELDS if k not in payload]
        if missing:
            raise TransportError(
                f"capabilities response missing fields: {missing}", retryable=False
            )
        self.capabilities = BackendCapabilities(
            vocab_size=int(payload["vocab_size"]),
            num_layers=int(payload["num_layers"]),
            layer_logits=bool(payload["layer_logits"]),
            head_masking=bool(payload["head_masking"]),
            chat_template_id=str(payload["chat_template_id"]),
        )

    def _get(self, route: str) -> dict:
        import requests

        try:
            resp = self._session.get(self.base_url + route, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"GET {route} failed: {exc}", retryable=True) from exc
        return self._payload(resp, route)

    def _payload(self, resp, route: str) -> dict:
        if resp.status_code != 200:
            try:
                body = resp.json()
                message = body.get("error", resp.text)
                retryable = bool(body.get("retryable", False))
            except ValueError:
                message, retryable = resp.text, False
            raise TransportError(f"{route}: {message}", retryable=retryable)
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"{route}: invalid JSON body", retryable=False) from exc

    def next_logits(self, request: LogitsRequest) -> LogitsResponse:
        import requests

        _check_request(request, self.capabilities)
        body = {
            "context": request.context,
            "want_layers": list(request.want_layers),
            "masked_heads": [list(pair) for pair in request.masked_heads],
        }
        try:
            resp = self._session.post(
                self.base_url + "/logits", json=body, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"POST /logits failed: {exc}", retryable=True) from exc
        payload = self._payload(resp, "/logits")
        v = self.capabilities.vocab_size
        final = as_logits(payload["final"], v)
        per_layer = {
            int(layer): as_logits(values, v)
            for layer, values in payload.get("per_layer", {}).items()
        }
        return LogitsResponse(final=final, per_layer=per_layer)

    def token_text(self, token_id: int) -> str:
        if self._vocab is None:
            payload = self._get("/vocab")
            if "tokens" not in payload:
                raise BackendError("remote backend exposes no /vocab token table")
            self._vocab = [str(t) for t in payload["tokens"]]
            if payload.get("eos_token_id") is not None:
                self.eos_token_id = int(payload["eos_token_id"])
        return self._vocab[token_id]
