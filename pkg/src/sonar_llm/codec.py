"""Small sentence autoencoder used as a frozen stand-in for a pretrained sentence codec.

The encoder is a bidirectional transformer whose final hidden states are
mean-pooled into one ``d``-dimensional embedding.  The decoder is a causal
transformer conditioned on that embedding by a learned projection added to
the input of every position (position 0 included, where the input token is
BOS).
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, TrainingDiverged
from .layers import INIT_STD, TransformerStack, normal_init, stack_param_count
from .optim import Adam, AdamConfig, cosine_lr
from .text import BOS, EOS, PAD, Document, Vocabulary, encode_tokens

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CodecConfig:
    vocab_size: int
    d: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    max_sentence_tokens: int = 64
    rope_base: float = 10000.0

    def __post_init__(self):
        for name in ("vocab_size", "d", "enc_layers", "dec_layers", "n_heads", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"codec {name} must be >= 1")
        if self.d % self.n_heads:
            raise ConfigError(f"codec width {self.d} is not divisible by {self.n_heads} heads")
        if self.max_sentence_tokens < 2:
            raise ConfigError("max_sentence_tokens must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


def codec_param_count(cfg: CodecConfig) -> int:
    d, v = cfg.d, cfg.vocab_size
    return (
        v * d + stack_param_count(d, cfg.enc_layers, cfg.ffn_mult)
        + v * d + d * d + stack_param_count(d, cfg.dec_layers, cfg.ffn_mult) + d * v
    )


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with PAD; returns ids ``[B, L]`` and a validity mask."""
    longest = max(len(s) for s in seqs)
    ids = np.full((len(seqs), longest), PAD, dtype=np.int64)
    valid = np.zeros((len(seqs), longest), dtype=bool)
    for r, s in enumerate(seqs):
        ids[r, : len(s)] = s
        valid[r, : len(s)] = True
    return ids, valid


class SentenceCodec:
    def __init__(self, cfg: CodecConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, v = cfg.d, cfg.vocab_size
        self.encoder = TransformerStack("enc", d, cfg.enc_layers, cfg.n_heads, cfg.ffn_mult,
                                        causal=False, rng=rng, rope_base=cfg.rope_base)
        self.decoder = TransformerStack("dec", d, cfg.dec_layers, cfg.n_heads, cfg.ffn_mult,
                                        causal=True, rng=rng, rope_base=cfg.rope_base)
        self.params: dict[str, Tensor] = {"enc.tok": normal_init(rng, (v, d), INIT_STD)}
        self.params.update(self.encoder.params)
        self.params["dec.tok"] = normal_init(rng, (v, d), INIT_STD)
        self.params["dec.cond"] = normal_init(rng, (d, d), INIT_STD)
        self.params.update(self.decoder.params)
        self.params["dec.head"] = normal_init(rng, (d, v), INIT_STD)
        self.frozen = False
        self._eot_cache: dict[tuple[int, ...], np.ndarray] = {}

    # -- weights ---------------------------------------------------------------

    def freeze(self) -> "SentenceCodec":
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        self.frozen = True
        return self

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()

    def load_weights(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"missing codec weight {name!r}")
            if arrays[name].shape != p.shape:
                raise ValueError(f"codec weight {name!r} has shape {arrays[name].shape}, expected {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)

    # -- encoder ---------------------------------------------------------------

    def _check_tokens(self, tokens: Sequence[int]) -> list[int]:
        tokens = [int(t) for t in tokens]
        m = self.cfg.max_sentence_tokens
        if len(tokens) > m:
            log.warning("sentence of %d tokens truncated to %d", len(tokens), m)
            tokens = tokens[: m - 1] + [EOS]
        if len(tokens) < 2:
            raise ContractError("a framed sentence needs at least BOS and EOS")
        return tokens

    def encode_batch(self, token_lists: Sequence[Sequence[int]]) -> Tensor:
        """Embeddings ``[B, d]`` for BOS/EOS-framed token lists."""
        ids, valid = pad_batch([self._check_tokens(t) for t in token_lists])
        b, length = ids.shape
        x = ad.embedding(self.params["enc.tok"], ids)
        h = self.encoder.forward(x, key_valid=valid)
        pool = (valid / valid.sum(axis=1, keepdims=True))[:, None, :]
        return ad.reshape(ad.matmul(Tensor(pool), h), (b, self.cfg.d))

    def encode_sentence(self, tokens: Sequence[int]) -> np.ndarray:
        return self.encode_batch([tokens]).data[0].copy()

    def encode_many(self, token_lists: Sequence[Sequence[int]], batch_size: int = 256) -> np.ndarray:
        out = [self.encode_batch(token_lists[i:i + batch_size]).data
               for i in range(0, len(token_lists), batch_size)]
        return np.concatenate(out, axis=0)

    def sentinel_embedding(self, tokens: Sequence[int]) -> np.ndarray:
        """Encode the sentinel once and return the same array on every later call."""
        key = tuple(int(t) for t in tokens)
        if key not in self._eot_cache:
            emb = self.encode_sentence(key)
            emb.setflags(write=False)
            self._eot_cache[key] = emb
        return self._eot_cache[key]

    # -- decoder ---------------------------------------------------------------

    def _conditioned_inputs(self, emb: Tensor, ids: np.ndarray) -> Tensor:
        b, t = ids.shape
        cond = ad.reshape(emb @ self.params["dec.cond"], (b, 1, self.cfg.d))
        spread = ad.matmul(Tensor(np.ones((b, t, 1))), cond)
        return ad.embedding(self.params["dec.tok"], ids) + spread

    def decode_logits(self, emb: Tensor, teacher: np.ndarray) -> Tensor:
        """Per-position logits ``[B, L-1, V]`` given embeddings ``[B, d]`` and padded teacher ids ``[B, L]``.

        Row ``i`` predicts ``teacher[:, i + 1]`` from the embedding and
        ``teacher[:, :i + 1]``.
        """
        emb = ad.as_tensor(emb)
        teacher = np.atleast_2d(np.asarray(teacher, dtype=np.int64))
        if emb.ndim == 1:
            emb = ad.reshape(emb, (1, emb.shape[0]))
        if np.any(teacher[:, 0] != BOS):
            raise ContractError("teacher tokens must start with BOS")
        inputs = teacher[:, :-1]
        h = self.decoder.forward(self._conditioned_inputs(emb, inputs))
        return h @ self.params["dec.head"]

    def token_ce(self, emb: Tensor, token_lists: Sequence[Sequence[int]]) -> tuple[Tensor, int]:
        """Summed next-token cross-entropy of ``token_lists`` decoded from ``emb``, and the token count."""
        ids, valid = pad_batch(token_lists)
        logits = self.decode_logits(emb, ids)
        b, t, v = logits.shape
        targets = np.where(valid[:, 1:], ids[:, 1:], -1)
        loss = ad.cross_entropy_logits(ad.reshape(logits, (b * t, v)), targets.reshape(-1), ignore_index=-1)
        return loss, int(valid[:, 1:].sum())

    def reconstruction_loss(self, token_lists: Sequence[Sequence[int]]) -> Tensor:
        """Per-token mean cross-entropy of decode(encode(s)) against s."""
        token_lists = [self._check_tokens(t) for t in token_lists]
        total, count = self.token_ce(self.encode_batch(token_lists), token_lists)
        return total * (1.0 / count)

    def greedy_decode_batch(self, embs: np.ndarray, max_len: int | None = None) -> list[list[int]]:
        """Argmax decoding from BOS; lowest id wins ties; each row stops at EOS or ``max_len`` tokens."""
        max_len = self.cfg.max_sentence_tokens if max_len is None else max_len
        if max_len > self.cfg.max_sentence_tokens:
            raise ContractError(f"max_len {max_len} exceeds max_sentence_tokens {self.cfg.max_sentence_tokens}")
        embs = np.atleast_2d(np.asarray(embs, dtype=np.float64))
        b = embs.shape[0]
        cond = embs @ self.params["dec.cond"].data
        tok = self.params["dec.tok"].data
        head = self.params["dec.head"].data
        cache = self.decoder.new_cache()
        seqs = [[BOS] for _ in range(b)]
        done = np.zeros(b, dtype=bool)
        cur = np.full(b, BOS, dtype=np.int64)
        for _ in range(max_len - 1):
            if done.all():
                break
            h = self.decoder.step(tok[cur] + cond, cache)
            nxt = np.argmax(h @ head, axis=1)
            for r in range(b):
                if not done[r]:
                    seqs[r].append(int(nxt[r]))
                    done[r] = nxt[r] == EOS
            cur = nxt
        return seqs

    def greedy_decode_sentence(self, emb: np.ndarray, max_len: int | None = None) -> list[int]:
        return self.greedy_decode_batch(np.asarray(emb)[None, :], max_len)[0]

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def reconstruction_accuracy(codec: SentenceCodec, token_lists: Sequence[Sequence[int]],
                            batch_size: int = 256) -> float:
    """Fraction of reference tokens (after BOS) reproduced at the same position by greedy decoding."""
    hit = total = 0
    for i in range(0, len(token_lists), batch_size):
        chunk = token_lists[i:i + batch_size]
        embs = codec.encode_batch(chunk).data
        for ref, out in zip(chunk, codec.greedy_decode_batch(embs)):
            ref = list(ref)[1:]
            out = out[1:]
            total += len(ref)
            hit += sum(1 for j, t in enumerate(ref) if j < len(out) and out[j] == t)
    return hit / total


@dataclass(frozen=True)
class CodecTrainConfig:
    steps: int = 1000
    batch_size: int = 64
    learning_rate: float = 3e-3
    warmup_steps: int = 100
    seed: int = 0
    time_budget_s: float | None = None
    target_loss: float | None = None


def pretrain_codec(corpus: Sequence[Document], vocab: Vocabulary, cfg: CodecConfig,
                   train_cfg: CodecTrainConfig = CodecTrainConfig(),
                   history: list[float] | None = None) -> SentenceCodec:
    """Train encoder and decoder jointly on sentence reconstruction, then freeze.

    Sentences are sampled from every occurrence in ``corpus``.  Training stops
    after ``steps`` updates, or earlier when the optional wall-clock budget or
    target loss is reached.
    """
    sentences = [encode_tokens(s, vocab, cfg.max_sentence_tokens) for doc in corpus for s in doc.sentences]
    if not sentences:
        raise ContractError("codec pretraining needs a non-empty corpus")
    codec = SentenceCodec(cfg, seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed + 1)
    params = list(codec.params.values())
    opt = Adam(params, AdamConfig())
    t0 = time.perf_counter()
    order = rng.permutation(len(sentences))
    cursor = 0
    bs = min(train_cfg.batch_size, len(sentences))
    for step in range(train_cfg.steps):
        if cursor + bs > len(order):
            order = rng.permutation(len(sentences))
            cursor = 0
        batch = [sentences[j] for j in order[cursor:cursor + bs]]
        cursor += bs
        loss = codec.reconstruction_loss(batch)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(step, value)
        if history is not None:
            history.append(value)
        grads = ad.backward(loss, wrt=params)
        lr = cosine_lr(step, train_cfg.steps, train_cfg.warmup_steps, train_cfg.learning_rate)
        opt.step([grads[p] for p in params], lr)
        if train_cfg.target_loss is not None and value < train_cfg.target_loss:
            break
        if train_cfg.time_budget_s is not None and time.perf_counter() - t0 > train_cfg.time_budget_s:
            log.info("codec pretraining stopped by time budget at step %d", step)
            break
    return codec.freeze()
