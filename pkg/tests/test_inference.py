import math

import numpy as np
import pytest

from sonar_llm.codec import CodecConfig, SentenceCodec
from sonar_llm.errors import ContractError
from sonar_llm.inference import (FunctionModel, GenerationResult, StopRule, cosine_similarity, generate,
                                 sentinel_rule)
from sonar_llm.text import SENTINEL, build_vocab, generate_synthetic_corpus

TINY = dict(d=8, enc_layers=1, dec_layers=1, n_heads=2, ffn_mult=2, max_sentence_tokens=12)


@pytest.fixture(scope="module")
def tiny():
    docs = generate_synthetic_corpus(2, 10)
    vocab = build_vocab(docs)
    codec = SentenceCodec(CodecConfig(len(vocab), **TINY), seed=1).freeze()
    return vocab, codec, sentinel_rule(codec, vocab, t_max=8)


def test_cosine_examples():
    v = np.array([0.3, -2.0, 1.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert abs(cosine_similarity([1, 1], [1, 0]) - 1 / math.sqrt(2)) < 1e-12
    with pytest.raises(ContractError):
        cosine_similarity([0, 0], [1, 0])


def test_stop_rule_validation():
    e = np.ones(3)
    with pytest.raises(ContractError):
        StopRule(e, tau_stop=0.0)
    with pytest.raises(ContractError):
        StopRule(e, tau_stop=1.5)
    with pytest.raises(ContractError):
        StopRule(e, t_max=0)
    assert StopRule(e, tau_stop=1.0).fires(2 * e)


def test_eot_stub_stops_immediately(tiny):
    vocab, codec, rule = tiny
    res = generate(FunctionModel(lambda h: rule.e_eot), codec, vocab, "Tom ran. He fell.", rule)
    assert res.stop_reason == "sentinel" and res.sentences == []
    assert cosine_similarity(res.embeddings[-1], rule.e_eot) >= 0.98


def test_t_max_one_bounds_output(tiny):
    vocab, codec, rule = tiny
    rule1 = StopRule(rule.e_eot, rule.tau_stop, t_max=1)
    res = generate(FunctionModel(lambda h: -rule.e_eot), codec, vocab, "Tom ran.", rule1)
    assert len(res.sentences) <= 1 and res.stop_reason == "t_max"


def test_empty_prompt_rejected(tiny):
    vocab, codec, rule = tiny
    with pytest.raises(ContractError):
        generate(FunctionModel(lambda h: h[-1]), codec, vocab, "   ", rule)


def test_predictions_are_refed_raw(tiny):
    vocab, codec, rule = tiny
    seen = []

    def fn(history):
        seen.append(history[-1].copy())
        return history[-1] * 0.5 + 1.0

    res = generate(FunctionModel(fn), codec, vocab, "Tom ran.", rule)
    for fed, produced in zip(seen[1:], res.embeddings):
        np.testing.assert_array_equal(fed, produced)


def test_stop_threshold_monotone(tiny):
    vocab, codec, rule = tiny
    rng = np.random.default_rng(3)
    target = rule.e_eot
    for _ in range(5):
        drift = rng.normal(size=target.size)
        # walks towards the sentinel, so similarity rises with each sentence
        model = FunctionModel(lambda h, d=drift: target + d / (1 + len(h)))
        counts = [len(generate(model, codec, vocab, "Tom ran.", StopRule(target, tau, 8)).sentences)
                  for tau in (0.5, 0.9, 0.98, 0.999, 1.0)]
        assert counts == sorted(counts)


def test_render_has_trailer():
    text = GenerationResult(["A b.", "C d."], stop_reason="sentinel").render()
    assert text == "A b.\nC d.\n# stop_reason=sentinel sentences=2\n"


def test_fuzzed_stubs_always_halt(tiny):
    vocab, codec, rule = tiny
    rng = np.random.default_rng(4)
    for i in range(100):
        w = rng.normal(0, 3, (8, 8))
        model = FunctionModel(lambda h, w=w: np.tanh(h[-1] @ w) * 5 + 1e-3)
        res = generate(model, codec, vocab, "Tom ran. He fell.", rule)
        assert len(res.sentences) <= rule.t_max
        assert res.stop_reason in ("sentinel", "t_max")


def _prompts(val_docs):
    return [list(d.content[:2]) for d in val_docs if len(d.content) > 2][:20]


@pytest.mark.slow
def test_trained_mse_model_stops_on_sentinel(desk_models, codec, vocab, val_docs):
    model = desk_models.get("mse_lcm").model
    rule = sentinel_rule(codec, vocab)
    results = [generate(model, codec, vocab, p, rule) for p in _prompts(val_docs)]
    assert len(results) == 20
    assert all(len(r.sentences) <= 32 for r in results)
    assert sum(r.stop_reason == "sentinel" for r in results) >= 16
    assert all(SENTINEL not in r.sentences for r in results)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="cross-entropy training fixes what the prediction decodes to, "
                   "not its direction; predictions that decode to the sentinel text stay far below "
                   "cosine 0.98 from e_eot at desk scale")
def test_trained_ce_model_stops_on_sentinel(desk_models, codec, vocab, val_docs):
    model = desk_models.get("ce_sonar").model
    rule = sentinel_rule(codec, vocab)
    results = [generate(model, codec, vocab, p, rule) for p in _prompts(val_docs)]
    assert sum(r.stop_reason == "sentinel" for r in results) >= 16
