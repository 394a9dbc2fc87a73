"""Scaling-law fitting and analytic inference-FLOPs models.

FLOPs conventions: one multiply-add is 2 FLOPs, dense layers cost ``2 P``
per processed token (``P`` = non-embedding parameters), and attention costs
``4 * n_layers * d_model * context`` per query token (QK^T plus AV).
Decoding is KV-cached, so step ``t`` attends over ``t`` positions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import ContractError
from .model import ConceptModelConfig, count_params

log = logging.getLogger(__name__)

ALPHA_MIN, ALPHA_MAX, ALPHA_STEP = 0.05, 2.0, 0.005
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# scaling law L(N) = a * N**-alpha + b
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingFit:
    a: float
    alpha: float
    b: float
    r2: float
    points: tuple[tuple[float, float], ...]
    degenerate: bool = False

    def predict(self, n) -> np.ndarray:
        return self.a * np.asarray(n, dtype=np.float64) ** (-self.alpha) + self.b


def _linear_ab(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``y ~ a x + b``; returns (a, b, sse)."""
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    a = float(dx @ (y - ym)) / sxx if sxx > 0 else 0.0
    b = ym - a * xm
    r = y - (a * x + b)
    return a, float(b), float(r @ r)


def fit_scaling_law(points: Sequence[tuple[float, float]], alpha_tol: float = 1e-12) -> ScalingFit:
    """Least-squares fit of ``L = a N^-alpha + b``.

    ``alpha`` is scanned on a 0.005 grid over [0.05, 2]; at each grid value
    ``(a, b)`` has a closed form.  The best grid cell is then refined by
    golden-section search down to ``alpha_tol``.
    """
    pts = [(float(n), float(l)) for n, l in points]
    if len(pts) < 4:
        raise ContractError(f"need at least 4 points, got {len(pts)}")
    n = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if len(set(n.tolist())) != len(n):
        raise ContractError("parameter counts must be distinct")
    if np.any(n <= 0) or np.any(y <= 0):
        raise ContractError("parameter counts and losses must be positive")
    grid = np.round(np.arange(ALPHA_MIN, ALPHA_MAX + ALPHA_STEP / 2, ALPHA_STEP), 10)
    if np.ptp(y) == 0.0:
        return ScalingFit(0.0, float(grid[0]), float(y.mean()), 1.0, tuple(pts), degenerate=True)

    # rescale N around its geometric mean so N**-alpha stays O(1)
    n_ref = float(np.exp(np.mean(np.log(n))))
    u = np.log(n / n_ref)

    def sse(alpha: float) -> float:
        return _linear_ab(np.exp(-alpha * u), y)[2]

    scores = [sse(al) for al in grid]
    k = int(np.argmin(scores))
    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[min(k + 1, len(grid) - 1)])
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = sse(c), sse(d)
    while hi - lo > alpha_tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = sse(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = sse(d)
        if hi - lo <= 4 * np.finfo(float).eps * max(abs(hi), 1.0):
            break
    alpha = 0.5 * (lo + hi)
    if sse(float(grid[k])) < sse(alpha):
        alpha = float(grid[k])
    a_scaled, b, res = _linear_ab(np.exp(-alpha * u), y)
    a = a_scaled * n_ref ** alpha
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return ScalingFit(a, alpha, b, 1.0 - res / ss_tot, tuple(pts))


# ---------------------------------------------------------------------------
# inference FLOPs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchShape:
    """Transformer shape; ``d_embed > 0`` marks a concept core with embedding projections."""

    n_layers: int
    d_model: int
    n_heads: int
    ffn_mult: int = 4
    vocab_size: int = 0
    d_embed: int = 0

    @property
    def params(self) -> int:
        cfg = ConceptModelConfig(d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads,
                                 ffn_mult=self.ffn_mult, d_embed=max(self.d_embed, 1))
        return count_params(cfg, False, kind="concept" if self.d_embed else "token")

    @property
    def attn_width(self) -> int:
        return self.n_layers * self.d_model


@dataclass(frozen=True)
class FlopsModel:
    concept: ArchShape
    encoder: ArchShape
    decoder: ArchShape
    avg_sentence_len: int = 60

    def __post_init__(self):
        if self.avg_sentence_len < 1:
            raise ContractError("average sentence length must be >= 1")


def flops_token_llm(shape: ArchShape, t: int) -> int:
    """Sum over t = 1..T of ``2P + 4 L d t`` in closed form."""
    if t < 1:
        raise ContractError("sequence length must be >= 1")
    return 2 * shape.params * t + 2 * shape.attn_width * t * (t + 1)


def flops_token_llm_steps(shape: ArchShape, t: int) -> int:
    return K.arith_step_sum(2 * shape.params, 4 * shape.attn_width, t)


def encoder_flops(shape: ArchShape, length: int) -> int:
    """One bidirectional pass over ``length`` tokens."""
    return 2 * shape.params * length + 2 * shape.attn_width * length * length


def decoder_flops(shape: ArchShape, length: int) -> int:
    """``length`` KV-cached decoding steps."""
    return 2 * shape.params * length + 2 * shape.attn_width * length * (length + 1)


def sentence_steps(fm: FlopsModel, t: int) -> int:
    return -(-t // fm.avg_sentence_len)


def flops_sonar_llm(fm: FlopsModel, t: int) -> int:
    """Concept-model decoding over ceil(T/lambda) sentences plus per-sentence encode and decode."""
    if t < 1:
        raise ContractError("sequence length must be >= 1")
    s = sentence_steps(fm, t)
    lam = fm.avg_sentence_len
    core = 2 * fm.concept.params * s + 2 * fm.concept.attn_width * s * (s + 1)
    return core + s * (encoder_flops(fm.encoder, lam) + decoder_flops(fm.decoder, lam))


def flops_sonar_llm_steps(fm: FlopsModel, t: int) -> int:
    s = sentence_steps(fm, t)
    lam = fm.avg_sentence_len
    core = K.arith_step_sum(2 * fm.concept.params, 4 * fm.concept.attn_width, s)
    enc = K.arith_step_sum(2 * fm.encoder.params + 2 * fm.encoder.attn_width * lam, 0, lam)
    dec = K.arith_step_sum(2 * fm.decoder.params, 4 * fm.decoder.attn_width, lam)
    return core + K.arith_step_sum(enc + dec, 0, s)


def quadratic_coefficients(token_shape: ArchShape, fm: FlopsModel) -> tuple[float, float]:
    """Leading T^2 coefficients extracted by exact second differences.

    Token model: step 1 in T.  Concept model: step lambda in T, sampled at
    multiples of lambda where ceil(T/lambda) is exact.
    """
    f = lambda t: flops_token_llm(token_shape, t)  # noqa: E731
    g = lambda t: flops_sonar_llm(fm, t)  # noqa: E731
    t0 = 1000
    tok = (f(t0 + 2) - 2 * f(t0 + 1) + f(t0)) / 2
    lam = fm.avg_sentence_len
    base = lam * 1000
    son = (g(base + 2 * lam) - 2 * g(base + lam) + g(base)) / (2 * lam * lam)
    return tok, son


@dataclass(frozen=True)
class Crossover:
    length: int | None
    fallback: bool = False


def _gap(token_shape: ArchShape, fm: FlopsModel, t: int) -> int:
    return flops_sonar_llm(fm, t) - flops_token_llm(token_shape, t)


def crossover_search(token_shape: ArchShape, fm: FlopsModel, t_max_search: int) -> Crossover:
    """Smallest T <= t_max_search with sonar FLOPs below token FLOPs.

    The sonar cost is a staircase in T (constant across each sentence), so the
    search first finds the sentence block by bisection and then the exact T
    inside it.  Bisection is only trusted after the block-end gap has been
    seen to change sign at most once on a doubling grid.
    """
    if t_max_search < 2:
        raise ContractError("t_max_search must be >= 2")
    lam = fm.avg_sentence_len
    s_max = sentence_steps(fm, t_max_search)

    def block_gap(s: int) -> int:
        return _gap(token_shape, fm, min(s * lam, t_max_search))

    grid = sorted({1 << i for i in range(s_max.bit_length()) if (1 << i) <= s_max} | {s_max})
    signs = [block_gap(s) < 0 for s in grid]
    crossings = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    single = crossings <= 1 and (not signs[0] or all(signs))
    if not single:
        log.warning("FLOPs gap is not single-crossing; falling back to a linear scan")
        return Crossover(linear_scan_crossover(token_shape, fm, t_max_search), fallback=True)
    if not signs[-1]:
        return Crossover(None)
    lo, hi = 0, s_max  # block_gap(lo) >= 0 (or lo == 0), block_gap(hi) < 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if block_gap(mid) < 0:
            hi = mid
        else:
            lo = mid
    t_lo = (hi - 1) * lam + 1
    t_hi = min(hi * lam, t_max_search)
    while t_lo < t_hi:
        mid = (t_lo + t_hi) // 2
        if _gap(token_shape, fm, mid) < 0:
            t_hi = mid
        else:
            t_lo = mid + 1
    return Crossover(t_lo)


def crossover_length(token_shape: ArchShape, fm: FlopsModel, t_max_search: int) -> int | None:
    return crossover_search(token_shape, fm, t_max_search).length


def linear_scan_crossover(token_shape: ArchShape, fm: FlopsModel, t_max_search: int) -> int | None:
    for t in range(1, t_max_search + 1):
        if _gap(token_shape, fm, t) < 0:
            return t
    return None


def flops_table(token_shape: ArchShape, fm: FlopsModel, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised closed forms over an int64 grid of sequence lengths."""
    ts = np.asarray(ts, dtype=np.int64)
    top = int(ts.max())
    if max(flops_token_llm(token_shape, top), flops_sonar_llm(fm, top)) >= 2 ** 62:
        raise OverflowError("FLOPs exceed the int64 range for this grid")
    p, w = token_shape.params, token_shape.attn_width
    llm = 2 * p * ts + 2 * w * ts * (ts + 1)
    lam = fm.avg_sentence_len
    s = -(-ts // lam)
    per_sentence = encoder_flops(fm.encoder, lam) + decoder_flops(fm.decoder, lam)
    sonar = 2 * fm.concept.params * s + 2 * fm.concept.attn_width * s * (s + 1) + s * per_sentence
    return llm, sonar


def flops_csv(token_shape: ArchShape, fm: FlopsModel, t_max: int, grid: str = "pow2", stride: int = 1) -> str:
    if grid == "pow2":
        ts = sorted({1 << i for i in range(t_max.bit_length()) if (1 << i) <= t_max} | {t_max})
        ts = np.array(ts, dtype=np.int64)
    elif grid == "linear":
        ts = np.arange(stride, t_max + 1, stride, dtype=np.int64)
        if ts.size == 0 or ts[-1] != t_max:
            ts = np.append(ts, t_max)
    else:
        raise ValueError(f"unknown grid {grid!r}")
    llm, sonar = flops_table(token_shape, fm, ts)
    rows = (f"{t},{a},{b}" for t, a, b in zip(ts.tolist(), llm.tolist(), sonar.tolist()))
    return "T,flops_llm,flops_sonar\n" + "\n".join(rows) + "\n"
