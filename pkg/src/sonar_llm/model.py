"""Decoder-only transformer over sentence embeddings, plus the token-level baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import CodecConfig, codec_param_count
from .errors import ConfigError, ContractError
from .layers import INIT_STD, TransformerStack, normal_init, stack_param_count


@dataclass(frozen=True)
class ConceptModelConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    d_embed: int = 32
    max_concepts: int = 64
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by {self.n_heads} heads")
        if (self.d_model // self.n_heads) % 2:
            raise ConfigError("head dimension must be even for rotary positions")
        if self.n_layers < 0 or self.ffn_mult < 1 or self.d_embed < 1 or self.max_concepts < 1:
            raise ConfigError("invalid concept model sizes")

    def to_dict(self) -> dict:
        return asdict(self)


def count_params(cfg: ConceptModelConfig, include_codec_and_embeddings: bool = False, *,
                 kind: str = "concept", vocab_size: int | None = None,
                 codec_cfg: CodecConfig | None = None) -> int:
    """Exact parameter count from shape arithmetic.

    ``kind="concept"`` counts the embedding-space transformer (input/output
    projections, blocks, final norm); with the flag set the frozen codec is
    added.  ``kind="token"`` counts the token baseline's blocks and final norm;
    with the flag set the tied embedding table is added.
    """
    d = cfg.d_model
    core = stack_param_count(d, cfg.n_layers, cfg.ffn_mult)
    if kind == "concept":
        n = core + (cfg.d_embed * d + d) + (d * cfg.d_embed + cfg.d_embed)
        if include_codec_and_embeddings:
            if codec_cfg is None:
                raise ContractError("counting codec parameters needs codec_cfg")
            n += codec_param_count(codec_cfg)
        return n
    if kind == "token":
        if include_codec_and_embeddings:
            if vocab_size is None:
                raise ContractError("counting the embedding table needs vocab_size")
            return core + vocab_size * d
        return core
    raise ValueError(f"unknown model kind {kind!r}")


class ConceptTransformer:
    """Maps a prefix of sentence embeddings to a prediction of the next one.

    There is no discrete lookup on this path: continuous vectors go in through
    a linear projection and come out through another.
    """

    kind = "concept"

    def __init__(self, cfg: ConceptModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self.stack = TransformerStack("blocks", d, cfg.n_layers, cfg.n_heads, cfg.ffn_mult,
                                      causal=True, rng=rng, rope_base=cfg.rope_base)
        self.params: dict[str, Tensor] = {
            "in_proj": normal_init(rng, (cfg.d_embed, d), INIT_STD),
            "in_bias": Tensor(np.zeros(d), requires_grad=True),
        }
        self.params.update(self.stack.params)
        self.params["out_proj"] = normal_init(rng, (d, cfg.d_embed), INIT_STD)
        self.params["out_bias"] = Tensor(np.zeros(cfg.d_embed), requires_grad=True)

    def forward(self, embs: Tensor) -> Tensor:
        """``embs[B, T, d_embed]`` -> predictions ``[B, T, d_embed]``; output t predicts input t+1."""
        embs = ad.as_tensor(embs)
        if embs.ndim == 2:
            embs = ad.reshape(embs, (1,) + embs.shape)
        t = embs.shape[1]
        if not 1 <= t <= self.cfg.max_concepts:
            raise ContractError(f"sequence of {t} concepts outside [1, {self.cfg.max_concepts}]")
        x = embs @ self.params["in_proj"] + self.params["in_bias"]
        h = self.stack.forward(x)
        return h @ self.params["out_proj"] + self.params["out_bias"]

    def session(self) -> "ConceptSession":
        return ConceptSession(self)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


class ConceptSession:
    """Incremental KV-cached roll-out: ``feed`` one embedding, get the next prediction."""

    def __init__(self, model: ConceptTransformer):
        self.model = model
        self.cache = model.stack.new_cache()

    def feed(self, emb: np.ndarray) -> np.ndarray:
        p = self.model.params
        x = np.asarray(emb, dtype=np.float64)[None, :] @ p["in_proj"].data + p["in_bias"].data
        h = self.model.stack.step(x, self.cache)
        return (h @ p["out_proj"].data + p["out_bias"].data)[0]


def rope_rotate(x, position, base: float = 10000.0) -> np.ndarray:
    """Rotary encoding of a single position applied to the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise ConfigError(f"rotary embedding needs an even head dimension, got {x.shape[-1]}")
    cos, sin = ad.rope_tables(np.array([position]), x.shape[-1], base)
    return ad._rotate(x, cos[0], sin[0])


def forward_concepts(model: ConceptTransformer, embeddings: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Predictions for e_2 .. e_{T+1}, one per prefix of ``embeddings``."""
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2 or len(arr) == 0:
        raise ContractError("forward_concepts needs a non-empty sequence of embeddings")
    out = model.forward(Tensor(arr[None])).data[0]
    return [row.copy() for row in out]


class TokenLM:
    """Token-level causal LM on the same block stack, with tied input/output embeddings."""

    kind = "token"

    def __init__(self, cfg: ConceptModelConfig, vocab_size: int, seed: int = 0):
        self.cfg = cfg
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        self.stack = TransformerStack("blocks", cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.ffn_mult,
                                      causal=True, rng=rng, rope_base=cfg.rope_base)
        self.params: dict[str, Tensor] = {"tok_emb": normal_init(rng, (vocab_size, cfg.d_model), INIT_STD)}
        self.params.update(self.stack.params)

    def forward(self, ids) -> Tensor:
        """Next-token logits ``[B, T, V]`` for ids ``[B, T]`` (or ``[T]``)."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        table = self.params["tok_emb"]
        h = self.stack.forward(ad.embedding(table, ids))
        return h @ ad.transpose(table, (1, 0))

    def greedy_continue(self, ids: Sequence[int], stop_ids: set[int], max_new: int) -> list[int]:
        table = self.params["tok_emb"].data
        cache = self.stack.new_cache()
        h = None
        for t in ids:
            h = self.stack.step(table[[int(t)]], cache)
        out: list[int] = []
        for _ in range(max_new):
            nxt = int(np.argmax(h @ table.T, axis=1)[0])
            out.append(nxt)
            if nxt in stop_ids:
                break
            h = self.stack.step(table[[nxt]], cache)
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def forward_tokens(model: TokenLM, ids: Sequence[int]) -> np.ndarray:
    return model.forward(np.asarray(ids)[None]).data[0]
