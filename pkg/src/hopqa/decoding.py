"""Next-token selection strategies and the greedy generation loop.

All four strategies are pure functions of their logit inputs, pick the
argmax of an adjusted score vector, and break ties toward the lowest
token id. Contrast arithmetic happens in logit space:

    standard   adjusted = final
    cad        adjusted = (1 + alpha) * with_ctx - alpha * without_ctx
    dola       adjusted = log p_final - log p_premature on the plausible set
    decore     adjusted = (1 + a_t) * base - a_t * masked,
               a_t = min(H(softmax(base)), alpha_cap)   (H in nats)
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .backends import (
    Backend,
    BackendCapabilities,
    CapabilityError,
    LogitsRequest,
    log_softmax,
    softmax,
)


@dataclass(frozen=True)
class StandardConfig:
    kind: str = field(default="standard", init=False)


@dataclass(frozen=True)
class CadConfig:
    alpha: float = 1.0
    kind: str = field(default="cad", init=False)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class DolaConfig:
    candidate_layers: tuple[int, ...]
    beta: float = 0.1
    kind: str = field(default="dola", init=False)

    def __post_init__(self):
        if not self.candidate_layers:
            raise ValueError("candidate_layers must be non-empty")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class DecoreConfig:
    retrieval_heads: tuple[tuple[int, int], ...]
    alpha_cap: float = 2.0
    kind: str = field(default="decore", init=False)

    def __post_init__(self):
        if not self.retrieval_heads:
            raise ValueError("retrieval_heads must be non-empty")
        if not self.alpha_cap >= 0:
            raise ValueError(f"alpha_cap must be >= 0, got {self.alpha_cap}")


DecoderConfig = StandardConfig | CadConfig | DolaConfig | DecoreConfig


@dataclass
class DecodeStep:
    """One decoded token: the choice, its score vector, and diagnostics."""

    chosen_token: int
    adjusted_scores: np.ndarray
    diagnostics: dict


def _argmax(scores: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest token id.
    return int(np.argmax(scores))


def decode_standard(final: np.ndarray) -> DecodeStep:
    scores = np.asarray(final, dtype=np.float64)
    return DecodeStep(_argmax(scores), scores, {"strategy": "standard"})


def decode_cad(with_ctx: np.ndarray, without_ctx: np.ndarray, alpha: float) -> DecodeStep:
    w = np.asarray(with_ctx, dtype=np.float64)
    wo = np.asarray(without_ctx, dtype=np.float64)
    if w.shape != wo.shape:
        raise ValueError(f"logit shapes differ: {w.shape} vs {wo.shape}")
    scores = (1.0 + alpha) * w - alpha * wo
    return DecodeStep(_argmax(scores), scores, {"strategy": "cad", "alpha": alpha})


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; 0 * ln 0 counts as 0."""
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0.0
    return float(-(p[nz] * np.log(p[nz])).sum())


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> float:
    """JSD in nats between two distributions of the same length."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def _kl(a, b):
        nz = a > 0.0
        return float((a[nz] * (np.log(a[nz]) - np.log(b[nz]))).sum())

    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def decode_dola(final: np.ndarray, candidates: Mapping[int, np.ndarray],
                beta: float) -> DecodeStep:
    """Contrast the final layer against the most-divergent candidate layer.

    The premature layer maximizes JSD against the final distribution
    (ties to the lowest layer index). Tokens below beta times the top
    final probability are excluded. When every plausible contrast score
    ties (identical distributions), fall back to the most probable
    plausible token under the final distribution.
    """
    if not candidates:
        raise ValueError("dola needs at least one candidate layer")
    p_final = softmax(final)
    lp_final = log_softmax(final)
    premature_layer = None
    best_jsd = -1.0
    for layer in sorted(candidates):
        div = jensen_shannon(p_final, softmax(candidates[layer]))
        if div > best_jsd:
            best_jsd = div
            premature_layer = layer
    plausible = p_final >= beta * p_final.max()
    lp_premature = log_softmax(candidates[premature_layer])
    scores = np.where(plausible, lp_final - lp_premature, -np.inf)
    plausible_scores = scores[plausible]
    fallback = bool(np.all(plausible_scores == plausible_scores[0]))
    if fallback:
        scores = np.where(plausible, lp_final, -np.inf)
    diagnostics = {
        "strategy": "dola",
        "premature_layer": premature_layer,
        "jsd": best_jsd,
        "plausible_size": int(plausible.sum()),
        "fallback": fallback,
    }
    return DecodeStep(_argmax(scores), scores, diagnostics)


def decode_decore(base: np.ndarray, masked: np.ndarray, alpha_cap: float) -> DecodeStep:
    b = np.asarray(base, dtype=np.float64)
    m = np.asarray(masked, dtype=np.float64)
    if b.shape != m.shape:
        raise ValueError(f"logit shapes differ: {b.shape} vs {m.shape}")
    h = entropy(softmax(b))
    alpha = min(h, alpha_cap)
    scores = (1.0 + alpha) * b - alpha * m
    diagnostics = {"strategy": "decore", "entropy": h, "alpha": alpha}
    return DecodeStep(_argmax(scores), scores, diagnostics)


def default_dola_layers(num_layers: int) -> tuple[int, ...]:
    """Even-indexed layers of the lower half of the network; never empty."""
    layers = tuple(layer for layer in range(0, max(num_layers // 2, 1)) if layer % 2 == 0)
    return layers or (0,)


def require_capabilities(decoder: DecoderConfig, caps: BackendCapabilities) -> None:
    """Fail before the first request when the backend cannot serve the decoder."""
    if isinstance(decoder, DolaConfig):
        if not caps.layer_logits:
            raise CapabilityError("dola requires the layer_logits capability")
        for layer in decoder.candidate_layers:
            if not 0 <= layer <= caps.num_layers:
                raise CapabilityError(
                    f"dola candidate layer {layer} outside [0, {caps.num_layers}]"
                )
    if isinstance(decoder, DecoreConfig):
        if not caps.head_masking:
            raise CapabilityError("decore requires the head_masking capability")


def load_retrieval_heads(path: str | Path) -> tuple[tuple[int, int], ...]:
    """Read a retrieval-heads config: {"model_id": str, "heads": [[layer, head], ...]}."""
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if "model_id" not in spec or "heads" not in spec:
        raise ValueError(f"{path}: retrieval-heads file needs model_id and heads")
    heads = []
    for i, pair in enumerate(spec["heads"]):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ValueError(f"{path}: heads[{i}] must be a [layer, head] pair")
        layer, head = int(pair[0]), int(pair[1])
        if layer < 0 or head < 0:
            raise ValueError(f"{path}: heads[{i}] has negative indices")
        heads.append((layer, head))
    if not heads:
        raise ValueError(f"{path}: heads list is empty")
    return tuple(heads)


@dataclass
class GenerationResult:
    text: str
    steps: list[DecodeStep]
    finish_reason: str  # "eos" | "stop" | "length"


def _decode_once(backend: Backend, decoder: DecoderConfig,
                 context: str, context_without: str) -> DecodeStep:
    if isinstance(decoder, StandardConfig):
        resp = backend.next_logits(LogitsRequest(context=context))
        return decode_standard(resp.final)
    if isinstance(decoder, CadConfig):
        with_resp = backend.next_logits(LogitsRequest(context=context))
        without_resp = backend.next_logits(LogitsRequest(context=context_without))
        return decode_cad(with_resp.final, without_resp.final, decoder.alpha)
    if isinstance(decoder, DolaConfig):
        resp = backend.next_logits(
            LogitsRequest(context=context, want_layers=decoder.candidate_layers)
        )
        return decode_dola(resp.final, resp.per_layer, decoder.beta)
    if isinstance(decoder, DecoreConfig):
        base = backend.next_logits(LogitsRequest(context=context))
        masked = backend.next_logits(
            LogitsRequest(context=context, masked_heads=decoder.retrieval_heads)
        )
        return decode_decore(base.final, masked.final, decoder.alpha_cap)
    raise TypeError(f"unknown decoder config: {decoder!r}")


def generate(backend: Backend, decoder: DecoderConfig, context: str, *,
             context_without: str | None = None,
             stop: Sequence[str] = (),
             stop_re: re.Pattern | None = None,
             max_new_tokens: int = 256) -> GenerationResult:
    """Greedy decoding until EOS, a stop condition, or the token budget.

    CAD callers supply ``context_without`` (the same prompt with the
    retrieved context elided); every chosen token is appended to both
    contexts. Literal ``stop`` strings truncate before their first
    occurrence; a ``stop_re`` match truncates after its end.
    """
    require_capabilities(decoder, backend.capabilities)
    if isinstance(decoder, CadConfig) and context_without is None:
        raise ValueError("cad decoding requires context_without")
    if context_without is None:
        context_without = context
    if max_new_tokens < 1:
        raise ValueError(f"max_new_tokens must be >= 1, got {max_new_tokens}")

    text = ""
    steps: list[DecodeStep] = []
    for _ in range(max_new_tokens):
        step = _decode_once(backend, decoder, context, context_without)
        steps.append(step)
        if step.chosen_token == backend.eos_token_id:
            return GenerationResult(text, steps, "eos")
        piece = backend.token_text(step.chosen_token)
        text += piece
        context += piece
        context_without += piece
        cut = min((text.find(s) for s in stop if s in text), default=-1)
        if cut >= 0:
            return GenerationResult(text[:cut], steps, "stop")
        if stop_re is not None:
            m = stop_re.search(text)
            if m:
                return GenerationResult(text[: m.end()], steps, "stop")
    return GenerationResult(text, steps, "length")
