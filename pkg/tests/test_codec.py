import numpy as np
import pytest

from sonar_llm import autodiff as ad
from sonar_llm.autodiff import Tensor
from sonar_llm.codec import (CodecConfig, CodecTrainConfig, SentenceCodec, pretrain_codec,
                             reconstruction_accuracy)
from sonar_llm.errors import ConfigError, ContractError
from sonar_llm.inference import cosine_similarity
from sonar_llm.text import BOS, EOS, SENTINEL, build_vocab, encode_tokens, make_document

TINY = dict(d=8, enc_layers=1, dec_layers=1, n_heads=2, ffn_mult=2, max_sentence_tokens=12)
rng = np.random.default_rng(8)


def tiny_codec(v=16, seed=0):
    return SentenceCodec(CodecConfig(vocab_size=v, **TINY), seed=seed)


def test_config_validation():
    with pytest.raises(ConfigError):
        CodecConfig(vocab_size=10, d=30, n_heads=4)
    with pytest.raises(ConfigError):
        CodecConfig(vocab_size=10, enc_layers=0)


def test_encode_is_deterministic_and_finite():
    codec = tiny_codec()
    toks = [BOS, 5, 6, 7, EOS]
    a, b = codec.encode_sentence(toks), codec.encode_sentence(toks)
    assert a.tobytes() == b.tobytes()
    assert np.all(np.isfinite(a)) and np.linalg.norm(a) > 0


def test_batch_encoding_matches_single_sentences():
    codec = tiny_codec()
    sents = [[BOS, 5, EOS], [BOS, 6, 7, 8, 9, EOS], [BOS, 4, 4, EOS]]
    batch = codec.encode_many(sents)
    for row, s in zip(batch, sents):
        np.testing.assert_allclose(row, codec.encode_sentence(s), rtol=1e-12, atol=1e-14)


def test_over_length_sentence_is_truncated(caplog):
    codec = tiny_codec()
    long = [BOS] + [5] * 20 + [EOS]
    emb = codec.encode_sentence(long)
    assert "truncated" in caplog.text
    np.testing.assert_array_equal(emb, codec.encode_sentence([BOS] + [5] * 10 + [EOS]))


def test_decode_logits_shape_and_causality():
    codec = tiny_codec()
    emb = rng.normal(size=8)
    teacher = np.array([[BOS, 5, 6, 7, 8, EOS]])
    logits = codec.decode_logits(Tensor(emb), teacher).data
    assert logits.shape == (1, 5, 16)
    for i in range(5):
        changed = teacher.copy()
        changed[0, i + 1:] = 9
        np.testing.assert_array_equal(codec.decode_logits(Tensor(emb), changed).data[0, :i + 1], logits[0, :i + 1])


def test_decode_gradient_reaches_frozen_embedding():
    codec = tiny_codec(seed=3)
    for p in codec.params.values():
        p.data = rng.normal(0, 0.3, p.shape)
    codec.freeze()
    toks = [[BOS, 5, 6, 7, EOS]]
    f = lambda e: codec.token_ce(ad.reshape(e, (1, 8)), toks)[0]  # noqa: E731
    assert ad.grad_check(f, rng.normal(size=8)) < 1e-4
    e = Tensor(rng.normal(size=(1, 8)), requires_grad=True)
    ad.backward(f(e))
    assert np.any(e.grad != 0)
    assert all(p.grad is None for p in codec.params.values())


def test_greedy_decode_terminates_within_max_len():
    codec = tiny_codec()
    for _ in range(10):
        out = codec.greedy_decode_sentence(rng.normal(size=8), max_len=6)
        assert out[0] == BOS and len(out) <= 6
    with pytest.raises(ContractError):
        codec.greedy_decode_sentence(rng.normal(size=8), max_len=13)


def test_greedy_decode_tie_goes_to_lowest_id():
    codec = tiny_codec()
    emb = rng.normal(size=8)
    cache = codec.decoder.new_cache()
    cond = emb @ codec.params["dec.cond"].data
    h = codec.decoder.step(codec.params["dec.tok"].data[[BOS]] + cond, cache)[0]
    head = np.zeros((8, 16))
    head[:, 5] = head[:, 9] = h
    codec.params["dec.head"].data = head
    assert codec.greedy_decode_sentence(emb, max_len=2) == [BOS, 5]


def test_sentinel_embedding_is_cached():
    corpus = [make_document(["A cat ran."])]
    vocab = build_vocab(corpus)
    codec = tiny_codec(len(vocab))
    toks = encode_tokens(SENTINEL, vocab, 12)
    first = codec.sentinel_embedding(toks)
    second = codec.sentinel_embedding(toks)
    assert first is second and not first.flags.writeable
    assert first.tobytes() == codec.encode_sentence(toks).tobytes()


def test_memorise_one_sentence():
    corpus = [make_document(["The red kite flew high."])]
    vocab = build_vocab(corpus)
    codec = pretrain_codec(corpus, vocab, CodecConfig(len(vocab), **TINY),
                           CodecTrainConfig(steps=200, batch_size=2, learning_rate=1e-2, warmup_steps=10))
    toks = [encode_tokens(s, vocab, 12) for s in corpus[0].sentences]
    assert codec.reconstruction_loss(toks).item() < 0.01
    assert codec.frozen


def test_pretrain_rejects_empty_corpus():
    with pytest.raises(ContractError):
        pretrain_codec([], build_vocab(["a"]), CodecConfig(8, **TINY))


@pytest.mark.slow
def test_trained_codec_quality(trained_codec, train_docs, vocab):
    codec, seconds, history = trained_codec
    assert seconds < 300
    assert history[-1] <= 0.1 * history[0]
    toks = [encode_tokens(s, vocab, 64) for d in train_docs for s in d.sentences]
    assert reconstruction_accuracy(codec, toks) >= 0.99


@pytest.mark.slow
def test_trained_codec_separates_sentences(codec, vocab, train_docs):
    sentences = sorted({s for d in train_docs[:60] for s in d.sentences})
    embs = codec.encode_many([encode_tokens(s, vocab) for s in sentences])
    worst = max(cosine_similarity(embs[i], embs[j])
                for i in range(len(embs)) for j in range(i + 1, len(embs)))
    assert worst < 0.999


def test_batch_decode_terminates_when_only_some_rows_end():
    codec = SentenceCodec(CodecConfig(vocab_size=12, d=8, enc_layers=1, dec_layers=1, n_heads=2,
                                      max_sentence_tokens=10), seed=5)
    # EOS is preferred exactly when the embedding points along +axis 0
    codec.params["dec.cond"].data = np.eye(8) * 50.0
    codec.params["dec.tok"].data[:] = 0.0
    head = np.zeros((8, 12))
    head[:, 5] = 0.5
    head[0, EOS] = 4.0
    codec.params["dec.head"].data = head
    codec.freeze()
    embs = np.zeros((3, 8))
    embs[:, 1] = 1.0
    embs[0, 0] = 1.0
    embs[2, 0] = 1.0
    out = codec.greedy_decode_batch(embs)
    singles = [codec.greedy_decode_sentence(e) for e in embs]
    assert out == singles
    assert out[0][-1] == EOS and out[2][-1] == EOS
    assert out[1][-1] != EOS and len(out[1]) == 10
