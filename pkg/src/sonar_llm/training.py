"""Training objectives and the epoch loop.

Three objectives share one loop:

* ``ce_sonar``  predicted embeddings are decoded by the frozen codec and
  scored with token cross-entropy against the true next sentence;
* ``mse_lcm``   squared error between predicted and true next embeddings;
* ``token_ce``  ordinary next-token cross-entropy for the token baseline.

All losses are per-element means over the whole batch (tokens for the two
cross-entropy objectives, embedding coordinates for MSE).
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import SentenceCodec, pad_batch
from .errors import ContractError, TrainingDiverged
from .model import ConceptModelConfig, ConceptTransformer, TokenLM
from .optim import Adam, AdamConfig, cosine_lr
from .text import BOS, EOS, Document, Vocabulary, frame_document

log = logging.getLogger(__name__)

OBJECTIVES = ("ce_sonar", "mse_lcm", "token_ce")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float | None = None
    epochs: int = 4
    batch_size: int = 4
    warmup_steps: int = 20
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")

    def lr_for(self, objective: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if objective == "ce_sonar" else 5e-4

    def adam(self) -> AdamConfig:
        return AdamConfig(self.beta1, self.beta2, self.eps, self.grad_clip_norm)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodedDoc:
    """A document framed as token lists, with frozen-codec embeddings when available."""

    tokens: list[list[int]]
    embeddings: np.ndarray | None = None


def encode_corpus(docs: Sequence[Document], vocab: Vocabulary, codec: SentenceCodec | None,
                  max_sentence_tokens: int = 64) -> list[EncodedDoc]:
    framed = [[list(s.tokens) for s in frame_document(d, vocab, max_sentence_tokens)] for d in docs]
    if codec is None:
        return [EncodedDoc(f) for f in framed]
    flat = [t for f in framed for t in f]
    embs = codec.encode_many(flat)
    out, k = [], 0
    for f in framed:
        out.append(EncodedDoc(f, embs[k:k + len(f)]))
        k += len(f)
    return out


def _usable(batch: Sequence[EncodedDoc]) -> list[EncodedDoc]:
    keep = [d for d in batch if len(d.tokens) >= 2]
    if len(keep) < len(batch):
        log.warning("skipped %d single-sentence document(s)", len(batch) - len(keep))
    return keep


def _predict_next(model, batch: Sequence[EncodedDoc]) -> tuple[Tensor, np.ndarray, list[list[int]]]:
    """Teacher-forced predictions for sentences 2..S of each document.

    Returns the gathered predictions ``[N, d]``, the matching true embeddings,
    and the matching token lists, all in ascending document order.
    """
    longest = max(len(d.tokens) for d in batch)
    dim = batch[0].embeddings.shape[1]
    inputs = np.zeros((len(batch), longest - 1, dim))
    rows, targets, tokens = [], [], []
    for b, doc in enumerate(batch):
        s = len(doc.tokens)
        inputs[b, : s - 1] = doc.embeddings[: s - 1]
        rows.extend(b * (longest - 1) + t for t in range(s - 1))
        targets.append(doc.embeddings[1:])
        tokens.extend(doc.tokens[1:])
    preds = model.forward(Tensor(inputs))
    flat = ad.reshape(preds, (len(batch) * (longest - 1), dim))
    return ad.getitem(flat, np.asarray(rows)), np.concatenate(targets), tokens


def ce_sonar_terms(model, codec: SentenceCodec, batch: Sequence[EncodedDoc]) -> tuple[Tensor, int]:
    preds, _, tokens = _predict_next(model, batch)
    return codec.token_ce(preds, tokens)


def mse_terms(model, batch: Sequence[EncodedDoc]) -> tuple[Tensor, int]:
    preds, targets, _ = _predict_next(model, batch)
    diff = preds - Tensor(targets)
    return ad.tsum(diff * diff), targets.size


def token_stream(doc: EncodedDoc) -> list[int]:
    """BOS, every sentence's inner tokens in order, EOS."""
    return [BOS] + [t for s in doc.tokens for t in s[1:-1]] + [EOS]


def token_terms(model: TokenLM, batch: Sequence[EncodedDoc]) -> tuple[Tensor, int]:
    ids, valid = pad_batch([token_stream(d) for d in batch])
    logits = model.forward(ids[:, :-1])
    b, t, v = logits.shape
    targets = np.where(valid[:, 1:], ids[:, 1:], -1)
    loss = ad.cross_entropy_logits(ad.reshape(logits, (b * t, v)), targets.reshape(-1), ignore_index=-1)
    return loss, int(valid[:, 1:].sum())


def objective_terms(objective: str, model, codec, batch) -> tuple[Tensor, int]:
    batch = _usable(batch)
    if not batch:
        raise ContractError("no document in the batch has two or more sentences")
    if objective == "ce_sonar":
        return ce_sonar_terms(model, codec, batch)
    if objective == "mse_lcm":
        return mse_terms(model, batch)
    if objective == "token_ce":
        return token_terms(model, batch)
    raise ValueError(f"unknown objective {objective!r}")


def ce_through_decoder_loss(model, codec: SentenceCodec, docs: Sequence[EncodedDoc]) -> Tensor:
    """Per-token mean cross-entropy of the true next sentences decoded from predicted embeddings."""
    total, n = objective_terms("ce_sonar", model, codec, docs)
    return total * (1.0 / n)


def mse_loss(model, docs: Sequence[EncodedDoc]) -> Tensor:
    total, n = objective_terms("mse_lcm", model, None, docs)
    return total * (1.0 / n)


def token_lm_loss(model: TokenLM, docs: Sequence[EncodedDoc]) -> Tensor:
    total, n = objective_terms("token_ce", model, None, docs)
    return total * (1.0 / n)


def build_model(objective: str, cfg: ConceptModelConfig, vocab_size: int, seed: int):
    if objective == "token_ce":
        return TokenLM(cfg, vocab_size, seed=seed)
    return ConceptTransformer(cfg, seed=seed)


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------

@dataclass
class LossReport:
    steps: list[tuple[int, int, float, float]] = field(default_factory=list)
    epochs: list[tuple[int, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        """``kind,step,epoch,lr,train_loss,val_loss`` rows; floats use repr for exact reproduction."""
        buf = io.StringIO()
        buf.write("kind,step,epoch,lr,train_loss,val_loss\n")
        by_epoch = {e: (tr, va) for e, tr, va in self.epochs}
        last_step = {}
        for step, epoch, lr, loss in self.steps:
            last_step[epoch] = step
        emitted = set()
        for step, epoch, lr, loss in self.steps:
            buf.write(f"step,{step},{epoch},{lr!r},{loss!r},\n")
            if last_step[epoch] == step and epoch in by_epoch:
                tr, va = by_epoch[epoch]
                buf.write(f"epoch,{step},{epoch},,{tr!r},{va!r}\n")
                emitted.add(epoch)
        for e, tr, va in self.epochs:
            if e not in emitted:
                buf.write(f"epoch,,{e},,{tr!r},{va!r}\n")
        return buf.getvalue()


@dataclass
class TrainResult:
    model: object
    report: LossReport
    objective: str


def evaluate_loss(objective: str, model, codec, docs: Sequence[EncodedDoc], batch_size: int = 16) -> float:
    total, count = 0.0, 0
    for i in range(0, len(docs), batch_size):
        loss, n = objective_terms(objective, model, codec, docs[i:i + batch_size])
        total += loss.item()
        count += n
    return total / count


def train_run(objective: str, train_docs: Sequence[EncodedDoc], val_docs: Sequence[EncodedDoc],
              model_cfg: ConceptModelConfig, train_cfg: TrainConfig, *, codec: SentenceCodec | None = None,
              vocab_size: int | None = None, model=None) -> TrainResult:
    """Optimise ``objective`` for ``train_cfg.epochs`` epochs; validation loss once per epoch.

    Deterministic given ``train_cfg.seed``.  Raises :class:`TrainingDiverged`
    on the first non-finite loss.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if not train_docs or not val_docs:
        raise ContractError("train and validation corpora must be non-empty")
    if objective == "ce_sonar" and codec is None:
        raise ContractError("ce_sonar needs a frozen codec")
    if codec is not None and not codec.frozen:
        raise ContractError("the codec must be frozen before training the concept model")
    if model is None:
        model = build_model(objective, model_cfg, vocab_size or 0, train_cfg.seed)
    params = list(model.params.values())
    opt = Adam(params, train_cfg.adam())
    rng = np.random.default_rng(train_cfg.seed)
    bs = train_cfg.batch_size
    per_epoch = math.ceil(len(train_docs) / bs)
    total_steps = per_epoch * train_cfg.epochs
    peak = train_cfg.lr_for(objective)
    report = LossReport()
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(train_docs))
        losses = []
        for k in range(per_epoch):
            idx = np.sort(order[k * bs:(k + 1) * bs])
            batch = [train_docs[i] for i in idx]
            total, n = objective_terms(objective, model, codec, batch)
            loss = total * (1.0 / n)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            grads = ad.backward(loss, wrt=params)
            lr = cosine_lr(step, total_steps, train_cfg.warmup_steps, peak)
            opt.step([grads[p] for p in params], lr)
            report.steps.append((step, epoch, lr, value))
            losses.append(value)
            step += 1
        val = evaluate_loss(objective, model, codec, val_docs)
        if not math.isfinite(val):
            raise TrainingDiverged(step, val)
        report.epochs.append((epoch, float(np.mean(losses)), val))
        log.info("epoch %d  train %.4f  val %.4f", epoch, report.epochs[-1][1], val)
    return TrainResult(model, report, objective)
