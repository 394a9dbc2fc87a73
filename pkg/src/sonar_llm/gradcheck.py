"""Whole-model finite-difference checks for the three training objectives."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import grad_check_params
from .codec import CodecConfig, SentenceCodec
from .model import ConceptModelConfig
from .text import Vocabulary, build_vocab, make_document
from .training import OBJECTIVES, build_model, encode_corpus, objective_terms

TINY_MODEL = ConceptModelConfig(d_model=8, n_layers=1, n_heads=2, ffn_mult=2, d_embed=8, max_concepts=8)
TINY_CODEC_DIMS = dict(d=8, enc_layers=1, dec_layers=1, n_heads=2, ffn_mult=2, max_sentence_tokens=12)

_DOCS = (
    ("Tom has a red ball.", "He likes it."),
    ("Mia sees a cat.", "The cat runs.", "She is sad."),
)


@dataclass(frozen=True)
class GradCheckResult:
    objective: str
    rel_err: float
    n_params: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.rel_err < 1e-4


def _scramble(params, rng: np.random.Generator, scale: float) -> None:
    # Default init is small enough that many gradient entries sit near the
    # finite-difference noise floor; larger weights make every entry informative.
    for p in params.values():
        p.data = rng.normal(0.0, scale, p.shape)


def tiny_setup(seed: int = 0):
    docs = [make_document(d) for d in _DOCS]
    vocab: Vocabulary = build_vocab(docs)
    codec = SentenceCodec(CodecConfig(vocab_size=len(vocab), **TINY_CODEC_DIMS), seed=seed)
    _scramble(codec.params, np.random.default_rng(seed + 100), 0.3)
    codec.freeze()
    encoded = encode_corpus(docs, vocab, codec, TINY_CODEC_DIMS["max_sentence_tokens"])
    return vocab, codec, encoded


def check_objective(objective: str, seed: int = 0, h: float = 1e-5) -> GradCheckResult:
    """Relative error of backprop against central differences over every trainable weight."""
    vocab, codec, docs = tiny_setup(seed)
    model = build_model(objective, TINY_MODEL, len(vocab), seed)
    _scramble(model.params, np.random.default_rng(seed + 200), 0.3)
    params = list(model.params.values())

    def loss():
        total, n = objective_terms(objective, model, codec, docs)
        return total * (1.0 / n)

    t0 = time.perf_counter()
    err = grad_check_params(loss, params, h, per="tensor")
    return GradCheckResult(objective, err, sum(p.size for p in params), time.perf_counter() - t0)


def check_all(seed: int = 0) -> list[GradCheckResult]:
    return [check_objective(o, seed) for o in OBJECTIVES]
