"""Next-sentence evaluation: feed a prefix, generate one sentence, score it."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .codec import SentenceCodec
from .metrics import bleu, meteor_lite, rouge_l
from .model import ConceptTransformer, TokenLM
from .text import BOS, EOS, Document, Vocabulary, decode_tokens, encode_tokens, tokenize

Predictor = Callable[[Sequence[str]], str]


def prefix_length(n_content: int, mode: str) -> int | None:
    """Number of context sentences, or None when the document is too short."""
    if mode == "short":
        k = 2
    elif mode == "long":
        k = max(1, n_content // 2)
    else:
        raise ValueError(f"unknown prefix mode {mode!r}")
    return k if k < n_content else None


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)
    skipped: int = 0

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.rows])) if self.rows else 0.0

    @property
    def bleu(self) -> float:
        return self.mean("bleu")

    @property
    def rouge_l(self) -> float:
        return self.mean("rouge_l")

    @property
    def meteor(self) -> float:
        return self.mean("meteor")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("doc,bleu,rouge_l,meteor,candidate,reference\n")
        for r in self.rows:
            cand = r["candidate"].replace('"', '""')
            ref = r["reference"].replace('"', '""')
            buf.write(f'{r["doc"]},{r["bleu"]!r},{r["rouge_l"]!r},{r["meteor"]!r},"{cand}","{ref}"\n')
        buf.write(f"mean,{self.bleu!r},{self.rouge_l!r},{self.meteor!r},,skipped={self.skipped}\n")
        return buf.getvalue()


def concept_predictor(model: ConceptTransformer, codec: SentenceCodec, vocab: Vocabulary) -> Predictor:
    m = codec.cfg.max_sentence_tokens

    def predict(prefix: Sequence[str]) -> str:
        embs = codec.encode_many([encode_tokens(s, vocab, m) for s in prefix])
        session = model.session()
        for e in embs:
            pred = session.feed(e)
        return decode_tokens(codec.greedy_decode_sentence(pred), vocab)

    return predict


def token_predictor(model: TokenLM, vocab: Vocabulary, max_new: int = 64) -> Predictor:
    stops = {EOS} | {vocab.id_of[t] for t in (".", "!", "?") if t in vocab}

    def predict(prefix: Sequence[str]) -> str:
        ids = [BOS] + [t for s in prefix for t in encode_tokens(s, vocab)[1:-1]]
        return decode_tokens(model.greedy_continue(ids, stops, max_new), vocab)

    return predict


def next_sentence_harness(predict: Predictor, docs: Sequence[Document], prefix_mode: str = "short") -> MetricReport:
    """Score one generated sentence per document against the true next sentence."""
    report = MetricReport()
    for i, doc in enumerate(docs):
        content = doc.content
        k = prefix_length(len(content), prefix_mode)
        if k is None:
            report.skipped += 1
            continue
        reference = content[k]
        candidate = predict(content[:k])
        c, r = tokenize(candidate), tokenize(reference)
        report.rows.append({
            "doc": i, "candidate": candidate, "reference": reference,
            "bleu": bleu(c, r), "rouge_l": rouge_l(c, r), "meteor": meteor_lite(c, r),
        })
    return report
