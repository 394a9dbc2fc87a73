"""Llama-style transformer stack shared by the sentence codec and the concept model.

Blocks are pre-norm: RMS-norm, multi-head self-attention with rotary
positions, residual add, RMS-norm, SiLU-gated feed-forward, residual add.
A final RMS-norm closes the stack.

``TransformerStack.forward`` runs on the autodiff tape for training;
``TransformerStack.step`` is a plain-numpy incremental path over a
:class:`KVCache` used for generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

INIT_STD = 0.02
NORM_EPS = 1e-5


def normal_init(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def stack_param_count(d: int, n_layers: int, ffn_mult: int) -> int:
    """Parameters of ``n_layers`` blocks plus the final norm gain."""
    per_block = 4 * d * d + 3 * ffn_mult * d * d + 2 * d
    return n_layers * per_block + d


@dataclass
class KVCache:
    """Rotated keys and values per layer, shape ``[B, H, t, head_dim]``."""

    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    length: int = 0


class TransformerStack:
    def __init__(self, prefix: str, d: int, n_layers: int, n_heads: int, ffn_mult: int,
                 causal: bool, rng: np.random.Generator, rope_base: float = 10000.0):
        if n_heads < 1 or d % n_heads:
            raise ConfigError(f"width {d} is not divisible by {n_heads} heads")
        if (d // n_heads) % 2:
            raise ConfigError(f"head dimension {d // n_heads} must be even for rotary positions")
        self.prefix = prefix
        self.d = d
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.ffn = ffn_mult * d
        self.causal = causal
        self.rope_base = rope_base
        resid_std = INIT_STD / math.sqrt(2 * max(n_layers, 1))
        self.params: dict[str, Tensor] = {}
        for i in range(n_layers):
            p = f"{prefix}.{i}"
            self.params[f"{p}.attn_norm"] = Tensor(np.ones(d), requires_grad=True)
            self.params[f"{p}.wq"] = normal_init(rng, (d, d), INIT_STD)
            self.params[f"{p}.wk"] = normal_init(rng, (d, d), INIT_STD)
            self.params[f"{p}.wv"] = normal_init(rng, (d, d), INIT_STD)
            self.params[f"{p}.wo"] = normal_init(rng, (d, d), resid_std)
            self.params[f"{p}.ffn_norm"] = Tensor(np.ones(d), requires_grad=True)
            self.params[f"{p}.w_gate"] = normal_init(rng, (d, self.ffn), INIT_STD)
            self.params[f"{p}.w_up"] = normal_init(rng, (d, self.ffn), INIT_STD)
            self.params[f"{p}.w_down"] = normal_init(rng, (self.ffn, d), resid_std)
        self.params[f"{prefix}.final_norm"] = Tensor(np.ones(d), requires_grad=True)

    def _p(self, i: int, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{i}.{name}"]

    # -- training path ------------------------------------------------------

    def _split_heads(self, x: Tensor, b: int, t: int) -> Tensor:
        return ad.transpose(ad.reshape(x, (b, t, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def _attention(self, i: int, h: Tensor, mask: np.ndarray | None) -> Tensor:
        b, t, d = h.shape
        pos = np.arange(t)
        q = ad.rope(self._split_heads(h @ self._p(i, "wq"), b, t), pos, self.rope_base)
        k = ad.rope(self._split_heads(h @ self._p(i, "wk"), b, t), pos, self.rope_base)
        v = self._split_heads(h @ self._p(i, "wv"), b, t)
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        probs = ad.softmax(scores, axis=-1, mask=mask)
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (b, t, d))
        return ctx @ self._p(i, "wo")

    def _feed_forward(self, i: int, h: Tensor) -> Tensor:
        gate = ad.silu(h @ self._p(i, "w_gate"))
        return ad.mul(gate, h @ self._p(i, "w_up")) @ self._p(i, "w_down")

    def attention_mask(self, t: int, key_valid: np.ndarray | None) -> np.ndarray | None:
        mask = np.tril(np.ones((t, t), dtype=bool)) if self.causal else None
        if key_valid is not None:
            km = np.asarray(key_valid, dtype=bool)[:, None, None, :]
            mask = km if mask is None else (mask[None, None] & km)
        return mask

    def forward(self, x: Tensor, key_valid: np.ndarray | None = None) -> Tensor:
        """Run ``x[B, T, d]`` through every block; ``key_valid[B, T]`` masks padded keys."""
        mask = self.attention_mask(x.shape[1], key_valid)
        for i in range(self.n_layers):
            x = x + self._attention(i, ad.rms_norm(x, self._p(i, "attn_norm"), NORM_EPS), mask)
            x = x + self._feed_forward(i, ad.rms_norm(x, self._p(i, "ffn_norm"), NORM_EPS))
        return ad.rms_norm(x, self.params[f"{self.prefix}.final_norm"], NORM_EPS)

    # -- incremental inference path -------------------------------------------

    def new_cache(self) -> KVCache:
        return KVCache([None] * self.n_layers, [None] * self.n_layers, 0)

    def step(self, x: np.ndarray, cache: KVCache) -> np.ndarray:
        """Advance one position for a batch ``x[B, d]``; returns final-norm output ``[B, d]``."""
        if not self.causal:
            raise ValueError("incremental stepping needs a causal stack")
        b = x.shape[0]
        pos = cache.length
        cos, sin = ad.rope_tables(np.array([pos]), self.head_dim, self.rope_base)
        scale = 1.0 / math.sqrt(self.head_dim)
        for i in range(self.n_layers):
            w = lambda n: self._p(i, n).data  # noqa: E731
            h, _ = K.rms_norm_fwd(x, w("attn_norm"), NORM_EPS)
            q = ad._rotate((h @ w("wq")).reshape(b, self.n_heads, 1, self.head_dim), cos, sin)
            k = ad._rotate((h @ w("wk")).reshape(b, self.n_heads, 1, self.head_dim), cos, sin)
            v = (h @ w("wv")).reshape(b, self.n_heads, 1, self.head_dim)
            if cache.keys[i] is None:
                cache.keys[i], cache.values[i] = k, v
            else:
                cache.keys[i] = np.concatenate([cache.keys[i], k], axis=2)
                cache.values[i] = np.concatenate([cache.values[i], v], axis=2)
            scores = (q @ np.swapaxes(cache.keys[i], -1, -2)) * scale
            probs = K.softmax_rows(scores.reshape(-1, scores.shape[-1])).reshape(scores.shape)
            ctx = (probs @ cache.values[i]).reshape(b, self.d)
            x = x + ctx @ w("wo")
            h, _ = K.rms_norm_fwd(x, w("ffn_norm"), NORM_EPS)
            g = h @ w("w_gate")
            x = x + ((g / (1.0 + np.exp(-g))) * (h @ w("w_up"))) @ w("w_down")
        cache.length += 1
        out, _ = K.rms_norm_fwd(x, self.params[f"{self.prefix}.final_norm"].data, NORM_EPS)
        return out
