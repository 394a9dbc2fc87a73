"""Sentence-level autoregressive generation with a sentinel-similarity stop rule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .codec import SentenceCodec
from .errors import ContractError
from .text import BOS, EOS, SENTINEL, Vocabulary, decode_tokens, encode_tokens, segment_sentences


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ContractError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class StopRule:
    e_eot: np.ndarray
    tau_stop: float = 0.98
    t_max: int = 32

    def __post_init__(self):
        if not 0.0 < self.tau_stop <= 1.0:
            raise ContractError(f"tau_stop must lie in (0, 1], got {self.tau_stop}")
        if self.t_max < 1:
            raise ContractError(f"t_max must be >= 1, got {self.t_max}")

    def fires(self, emb: np.ndarray) -> bool:
        return cosine_similarity(emb, self.e_eot) >= self.tau_stop


@dataclass
class GenerationResult:
    sentences: list[str]
    embeddings: list[np.ndarray] = field(default_factory=list)
    stop_reason: str = "t_max"

    def render(self) -> str:
        lines = list(self.sentences)
        lines.append(f"# stop_reason={self.stop_reason} sentences={len(self.sentences)}")
        return "\n".join(lines) + "\n"


class FunctionModel:
    """Adapts ``fn(history) -> next embedding`` to the session protocol used by :func:`generate`."""

    def __init__(self, fn: Callable[[list[np.ndarray]], np.ndarray]):
        self.fn = fn

    def session(self):
        return _FunctionSession(self.fn)


class _FunctionSession:
    def __init__(self, fn):
        self.fn = fn
        self.history: list[np.ndarray] = []

    def feed(self, emb: np.ndarray) -> np.ndarray:
        self.history.append(np.asarray(emb, dtype=np.float64))
        return np.asarray(self.fn(list(self.history)), dtype=np.float64)


def sentinel_rule(codec: SentenceCodec, vocab: Vocabulary, tau_stop: float = 0.98, t_max: int = 32,
                  sentinel: str = SENTINEL) -> StopRule:
    e_eot = codec.sentinel_embedding(encode_tokens(sentinel, vocab, codec.cfg.max_sentence_tokens))
    return StopRule(e_eot, tau_stop, t_max)


def generate(model, codec: SentenceCodec, vocab: Vocabulary, prompt: str | Sequence[str],
             stop_rule: StopRule) -> GenerationResult:
    """Continue ``prompt`` sentence by sentence.

    Each predicted embedding is tested against the sentinel before it is
    decoded, so the sentinel itself is never emitted.  Predicted embeddings are
    fed back unchanged (not re-encoded from their decoded text).
    """
    sentences = segment_sentences(prompt) if isinstance(prompt, str) else list(prompt)
    if not sentences:
        raise ContractError("prompt must contain at least one sentence")
    m = codec.cfg.max_sentence_tokens
    embs = codec.encode_many([encode_tokens(s, vocab, m) for s in sentences])
    session = model.session()
    pred = None
    for e in embs:
        pred = session.feed(e)
    result = GenerationResult([])
    for i in range(stop_rule.t_max):
        result.embeddings.append(pred)
        if stop_rule.fires(pred):
            result.stop_reason = "sentinel"
            return result
        result.sentences.append(decode_tokens(codec.greedy_decode_sentence(pred), vocab))
        if i + 1 < stop_rule.t_max:
            pred = session.feed(pred)
    result.stop_reason = "t_max"
    return result


def generate_tokens(model, vocab: Vocabulary, prompt: str | Sequence[str], t_max: int = 32,
                    max_sentence_tokens: int = 64, sentinel: str = SENTINEL) -> GenerationResult:
    """Token-level counterpart of :func:`generate` for the next-token baseline.

    Sentences end at terminal punctuation.  Generation stops when the model
    emits EOS, produces the sentinel sentence, or reaches ``t_max`` sentences.
    """
    sentences = segment_sentences(prompt) if isinstance(prompt, str) else list(prompt)
    if not sentences:
        raise ContractError("prompt must contain at least one sentence")
    stops = {EOS} | {vocab.id_of[t] for t in (".", "!", "?") if t in vocab}
    ids = [BOS] + [t for s in sentences for t in encode_tokens(s, vocab)[1:-1]]
    result = GenerationResult([])
    for _ in range(t_max):
        new = model.greedy_continue(ids, stops, max_sentence_tokens)
        ended = bool(new) and new[-1] == EOS
        text = decode_tokens(new, vocab)
        if text == sentinel or (ended and not text):
            result.stop_reason = "sentinel" if text == sentinel else "eos"
            return result
        result.sentences.append(text)
        if ended:
            result.stop_reason = "eos"
            return result
        ids = ids + new
    result.stop_reason = "t_max"
    return result
