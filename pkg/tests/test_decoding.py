import math
import random
import re

import numpy as np
import pytest

from hopqa import (
    BackendCapabilities,
    CadConfig,
    CapabilityError,
    DecoreConfig,
    DolaConfig,
    ScriptedBackend,
    StandardConfig,
    decode_cad,
    decode_decore,
    decode_dola,
    decode_standard,
    default_dola_layers,
    generate,
    require_capabilities,
)
from hopqa.backends import EOS_TOKEN, ScriptEntry
from hopqa.decoding import entropy, jensen_shannon, load_retrieval_heads


# Brute-force mirrors of the four strategies, coded independently of the
# production functions (plain Python floats, explicit loops).

def oracle_softmax(logits):
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    z = sum(exps)
    return [e / z for e in exps]


def oracle_argmax(scores):
    best, best_idx = None, None
    for i, s in enumerate(scores):
        if best is None or s > best:
            best, best_idx = s, i
    return best_idx


def oracle_standard(final):
    return list(final), oracle_argmax(final)


def oracle_cad(with_ctx, without_ctx, alpha):
    scores = [(1 + alpha) * w - alpha * wo for w, wo in zip(with_ctx, without_ctx)]
    return scores, oracle_argmax(scores)


def oracle_jsd(p, q):
    m = [(a + b) / 2 for a, b in zip(p, q)]

    def kl(a, b):
        return sum(x * math.log(x / y) for x, y in zip(a, b) if x > 0)

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def oracle_dola(final, candidates, beta):
    p_final = oracle_softmax(final)
    best_layer, best_div = None, -1.0
    for layer in sorted(candidates):
        div = oracle_jsd(p_final, oracle_softmax(candidates[layer]))
        if div > best_div:
            best_layer, best_div = layer, div
    p_premature = oracle_softmax(candidates[best_layer])
    top = max(p_final)
    plausible = [i for i, p in enumerate(p_final) if p >= beta * top]
    contrast = {i: math.log(p_final[i]) - math.log(p_premature[i]) for i in plausible}
    values = list(contrast.values())
    if all(v == values[0] for v in values):
        scores = [math.log(p_final[i]) if i in contrast else -math.inf
                  for i in range(len(final))]
    else:
        scores = [contrast.get(i, -math.inf) for i in range(len(final))]
    return scores, oracle_argmax(scores)


def oracle_decore(base, masked, cap):
    p = oracle_softmax(base)
    h = -sum(x * math.log(x) for x in p if x > 0)
    alpha = min(h, cap)
    scores = [(1 + alpha) * b - alpha * m for b, m in zip(base, masked)]
    return scores, oracle_argmax(scores)


def random_logits(rng, v):
    return [rng.uniform(-10, 10) for _ in range(v)]


def test_standard_examples():
    assert decode_standard(np.array([2.0, 0.0])).chosen_token == 0
    assert decode_standard(np.array([1.0, 1.0])).chosen_token == 0
    assert decode_standard(np.array([-5.0, -1.0, -3.0])).chosen_token == 1


def test_cad_examples():
    step = decode_cad(np.array([2.0, 0.0]), np.array([0.0, 2.0]), alpha=1.0)
    assert step.adjusted_scores.tolist() == [4.0, -2.0]
    assert step.chosen_token == 0

    flip = decode_cad(np.array([1.0, 1.2]), np.array([0.0, 3.0]), alpha=0.5)
    assert flip.adjusted_scores.tolist() == pytest.approx([1.5, 0.3])
    assert flip.chosen_token == 0
    assert decode_standard(np.array([1.0, 1.2])).chosen_token == 1


def test_cad_alpha_zero_is_standard():
    rng = random.Random(11)
    for _ in range(50):
        logits = np.array(random_logits(rng, rng.randint(2, 16)))
        other = np.array(random_logits(rng, len(logits)))
        assert decode_cad(logits, other, 0.0).chosen_token == \
            decode_standard(logits).chosen_token


def test_cad_shape_mismatch():
    with pytest.raises(ValueError):
        decode_cad(np.zeros(3), np.zeros(2), alpha=1.0)


def test_cad_shift_invariance():
    rng = random.Random(23)
    for _ in range(200):
        v = rng.randint(2, 32)
        w = np.array(random_logits(rng, v))
        wo = np.array(random_logits(rng, v))
        alpha = rng.uniform(0, 3)
        base = decode_cad(w, wo, alpha).chosen_token
        shifted = decode_cad(w + rng.uniform(-50, 50), wo + rng.uniform(-50, 50), alpha)
        assert shifted.chosen_token == base


def test_entropy_and_jsd_values():
    assert entropy(np.array([0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-12)
    assert entropy(np.array([1.0, 0.0])) == 0.0
    p = np.array([1.0, 0.0])
    q = np.array([0.0, 1.0])
    assert jensen_shannon(p, q) == pytest.approx(math.log(2), abs=1e-12)
    assert jensen_shannon(p, p) == pytest.approx(0.0, abs=1e-12)


def test_dola_worked_example():
    step = decode_dola(np.array([3.0, 1.0, 0.0]), {0: np.array([0.0, 2.0, 0.0])}, beta=0.1)
    assert step.chosen_token == 0
    assert step.adjusted_scores[0] == pytest.approx(2.0697, abs=1e-3)
    assert step.adjusted_scores[1] == pytest.approx(-1.9303, abs=1e-3)
    assert step.adjusted_scores[2] == -np.inf
    assert step.diagnostics["plausible_size"] == 2
    assert step.diagnostics["fallback"] is False


def test_dola_identical_candidate_falls_back():
    final = np.array([3.0, 1.0, 0.0])
    step = decode_dola(final, {0: final.copy()}, beta=0.1)
    assert step.diagnostics["fallback"] is True
    assert step.chosen_token == 0


def test_dola_premature_layer_maximizes_divergence():
    final = np.array([3.0, 1.0, 0.0])
    candidates = {0: final.copy(), 2: np.array([0.0, 2.0, 0.0])}
    step = decode_dola(final, candidates, beta=0.1)
    assert step.diagnostics["premature_layer"] == 2


def test_dola_jsd_tie_prefers_lowest_layer():
    final = np.array([3.0, 1.0, 0.0])
    other = np.array([0.0, 2.0, 0.0])
    step = decode_dola(final, {1: other.copy(), 3: other.copy()}, beta=0.1)
    assert step.diagnostics["premature_layer"] == 1


def test_dola_beta_near_one_selects_modal_token():
    rng = random.Random(31)
    for _ in range(200):
        v = rng.randint(2, 16)
        final = np.array(random_logits(rng, v))
        cand = {0: np.array(random_logits(rng, v))}
        step = decode_dola(final, cand, beta=0.999999)
        assert step.chosen_token == decode_standard(final).chosen_token


def test_dola_empty_candidates():
    with pytest.raises(ValueError):
        decode_dola(np.array([1.0, 0.0]), {}, beta=0.1)


def test_decore_worked_example():
    step = decode_decore(np.array([1.0, 1.0]), np.array([0.0, 2.0]), alpha_cap=2.0)
    assert step.adjusted_scores.tolist() == pytest.approx([1.6931, 0.3069], abs=1e-4)
    assert step.chosen_token == 0
    assert step.diagnostics["alpha"] == pytest.approx(math.log(2), abs=1e-9)


def test_decore_near_one_hot_base_matches_standard():
    step = decode_decore(np.array([10.0, -10.0]), np.array([0.0, 100.0]), alpha_cap=2.0)
    assert step.chosen_token == 0
    assert step.diagnostics["alpha"] == pytest.approx(0.0, abs=1e-6)


def test_decore_zero_cap_is_standard():
    rng = random.Random(47)
    for _ in range(50):
        v = rng.randint(2, 16)
        base = np.array(random_logits(rng, v))
        masked = np.array(random_logits(rng, v))
        step = decode_decore(base, masked, alpha_cap=0.0)
        assert step.chosen_token == decode_standard(base).chosen_token
        assert np.array_equal(step.adjusted_scores, base)


def test_decore_alpha_bounded_by_cap():
    rng = random.Random(53)
    for _ in range(200):
        v = rng.randint(2, 32)
        cap = rng.uniform(0, 3)
        step = decode_decore(np.array(random_logits(rng, v)),
                             np.array(random_logits(rng, v)), alpha_cap=cap)
        assert 0.0 <= step.diagnostics["alpha"] <= cap + 1e-12


def test_oracle_equivalence_all_strategies():
    rng = random.Random(6161)
    for _ in range(250):
        v = rng.randint(2, 64)
        final = random_logits(rng, v)
        other = random_logits(rng, v)

        scores, token = oracle_standard(final)
        got = decode_standard(np.array(final))
        assert got.chosen_token == token
        assert np.max(np.abs(got.adjusted_scores - np.array(scores))) < 1e-9

        alpha = rng.uniform(0, 2)
        scores, token = oracle_cad(final, other, alpha)
        got = decode_cad(np.array(final), np.array(other), alpha)
        assert got.chosen_token == token
        assert np.max(np.abs(got.adjusted_scores - np.array(scores))) < 1e-9

        layers = {i: random_logits(rng, v) for i in range(rng.randint(1, 4))}
        beta = rng.uniform(0.05, 0.9)
        scores, token = oracle_dola(final, layers, beta)
        got = decode_dola(np.array(final), {k: np.array(t) for k, t in layers.items()}, beta)
        assert got.chosen_token == token
        finite = [s for s in scores if s != -math.inf]
        got_finite = got.adjusted_scores[got.adjusted_scores != -np.inf]
        assert np.max(np.abs(got_finite - np.array(finite))) < 1e-9

        cap = rng.uniform(0, 3)
        scores, token = oracle_decore(final, other, cap)
        got = decode_decore(np.array(final), np.array(other), cap)
        assert got.chosen_token == token
        assert np.max(np.abs(got.adjusted_scores - np.array(scores))) < 1e-9


def test_dola_plausibility_always_satisfied():
    rng = random.Random(9090)
    for _ in range(250):
        v = rng.randint(2, 32)
        final = np.array(random_logits(rng, v))
        layers = {i: np.array(random_logits(rng, v)) for i in range(rng.randint(1, 3))}
        beta = rng.uniform(0.05, 0.95)
        step = decode_dola(final, layers, beta)
        p = np.exp(final - final.max())
        p = p / p.sum()
        assert p[step.chosen_token] >= beta * p.max() - 1e-12


def test_default_dola_layers():
    assert default_dola_layers(32) == (0, 2, 4, 6, 8, 10, 12, 14)
    assert default_dola_layers(4) == (0,)
    assert default_dola_layers(1) == (0,)


def test_config_validation():
    with pytest.raises(ValueError):
        CadConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        DolaConfig(candidate_layers=())
    with pytest.raises(ValueError):
        DolaConfig(candidate_layers=(0,), beta=1.0)
    with pytest.raises(ValueError):
        DecoreConfig(retrieval_heads=())
    with pytest.raises(ValueError):
        DecoreConfig(retrieval_heads=((0, 0),), alpha_cap=-1.0)


def test_require_capabilities():
    caps = BackendCapabilities(vocab_size=4, num_layers=4, layer_logits=False,
                               head_masking=False, chat_template_id="plain")
    require_capabilities(StandardConfig(), caps)
    require_capabilities(CadConfig(), caps)
    with pytest.raises(CapabilityError, match="layer_logits"):
        require_capabilities(DolaConfig(candidate_layers=(0,)), caps)
    with pytest.raises(CapabilityError, match="head_masking"):
        require_capabilities(DecoreConfig(retrieval_heads=((0, 0),)), caps)
    full = BackendCapabilities(vocab_size=4, num_layers=4, layer_logits=True,
                               head_masking=True, chat_template_id="plain")
    with pytest.raises(CapabilityError, match="candidate layer"):
        require_capabilities(DolaConfig(candidate_layers=(9,)), full)


def test_load_retrieval_heads(tmp_path):
    path = tmp_path / "heads.json"
    path.write_text('{"model_id": "m", "heads": [[3, 7], [5, 1]]}')
    assert load_retrieval_heads(path) == ((3, 7), (5, 1))
    path.write_text('{"model_id": "m", "heads": [[3]]}')
    with pytest.raises(ValueError, match="heads\\[0\\]"):
        load_retrieval_heads(path)
    path.write_text('{"heads": []}')
    with pytest.raises(ValueError):
        load_retrieval_heads(path)


def make_echo_backend():
    return ScriptedBackend([
        ScriptEntry(contains="Question: Who", completion="Action 1: Search[Wellcome Trust]"),
    ])


def test_generate_emits_scripted_line_then_eos():
    backend = make_echo_backend()
    result = generate(backend, StandardConfig(), "Question: Who founded it?\n")
    assert result.text == "Action 1: Search[Wellcome Trust]"
    assert result.finish_reason == "eos"
    assert len(result.steps) == 2  # the line, then EOS


def test_generate_stop_string_truncates_before_match():
    backend = ScriptedBackend([ScriptEntry(contains="Q", completion="one\ntwo")])
    result = generate(backend, StandardConfig(), "Q", stop=["\n"])
    assert result.text == "one"
    assert result.finish_reason == "stop"


def test_generate_stop_regex_truncates_after_match():
    backend = ScriptedBackend([
        ScriptEntry(contains="Q", completion="Thought 1: T\nAction 1: Search[X]\nleftover"),
    ])
    result = generate(backend, StandardConfig(), "Q",
                      stop_re=re.compile(r"Action\s+\d+\s*:[^\n]*\n"))
    assert result.text == "Thought 1: T\nAction 1: Search[X]\n"
    assert result.finish_reason == "stop"


def test_generate_respects_token_budget():
    # Each request matches the same entry and re-emits the same token.
    backend = ScriptedBackend(
        [ScriptEntry(contains="Q", final=(0.0, 5.0))], vocab=[EOS_TOKEN, "x"]
    )
    result = generate(backend, StandardConfig(), "Q", max_new_tokens=5)
    assert result.text == "xxxxx"
    assert result.finish_reason == "length"
    with pytest.raises(ValueError):
        generate(backend, StandardConfig(), "Q", max_new_tokens=0)


def test_generate_cad_requires_elided_context():
    backend = make_echo_backend()
    with pytest.raises(ValueError, match="context_without"):
        generate(backend, CadConfig(), "Question: Who?")


def test_generate_cad_identical_contexts_match_standard():
    text_std = generate(make_echo_backend(), StandardConfig(), "Question: Who?").text
    text_cad = generate(make_echo_backend(), CadConfig(), "Question: Who?",
                        context_without="Question: Who?").text
    assert text_cad == text_std


def test_generate_decore_flip_matches_step_oracle():
    # Masked table suppresses the context-copy token; the contrast must
    # flip the choice exactly as the brute-force step math predicts.
    final = (0.0, 1.0, 0.9)
    masked = (0.0, 2.5, 0.1)
    backend = ScriptedBackend(
        [ScriptEntry(contains="Q", final=final, masked=masked)],
        vocab=[EOS_TOKEN, "copy", "prior"],
    )
    scores, token = oracle_decore(list(final), list(masked), cap=2.0)
    step = generate(backend, DecoreConfig(retrieval_heads=((0, 0),), alpha_cap=2.0),
                    "Q", max_new_tokens=1).steps[0]
    assert step.chosen_token == token
    assert np.max(np.abs(step.adjusted_scores - np.array(scores))) < 1e-9
    assert token != decode_standard(np.array(final)).chosen_token


def test_generate_preflight_fails_before_any_request():
    caps = BackendCapabilities(vocab_size=2, num_layers=4, layer_logits=False,
                               head_masking=False, chat_template_id="plain")
    backend = ScriptedBackend([ScriptEntry(contains="Q", completion="x")],
                              capabilities=caps)
    with pytest.raises(CapabilityError):
        generate(backend, DolaConfig(candidate_layers=(0,)), "Q")
    assert backend.request_count == 0
