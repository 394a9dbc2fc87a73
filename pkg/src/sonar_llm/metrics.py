"""BLEU, ROUGE-L and an exact-match METEOR variant over token sequences."""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Sequence

import numpy as np

from . import _kernels as K


def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[Hashable], reference: Sequence[Hashable], max_n: int = 4) -> float:
    """Sentence BLEU with brevity penalty.

    Unigram precision is unsmoothed; for n >= 2 one is added to both the
    clipped match count and the candidate n-gram count.
    """
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        match = sum(min(c, ref[g]) for g, c in cand.items())
        total = sum(cand.values())
        if n >= 2:
            match, total = match + 1, total + 1
        if match == 0:
            return 0.0
        log_sum += math.log(match / total)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


def _ids(a: Sequence[Hashable], b: Sequence[Hashable]) -> tuple[np.ndarray, np.ndarray]:
    table: dict = {}
    ia = np.fromiter((table.setdefault(t, len(table)) for t in a), dtype=np.int64, count=len(a))
    ib = np.fromiter((table.setdefault(t, len(table)) for t in b), dtype=np.int64, count=len(b))
    return ia, ib


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    return K.lcs_length(*_ids(a, b))


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> float:
    """F1 of LCS-based precision and recall."""
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def align_exact(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> list[tuple[int, int]]:
    """Greedy left-to-right alignment; each reference position is used at most once."""
    used = [False] * len(reference)
    pairs = []
    for i, tok in enumerate(candidate):
        for j, ref in enumerate(reference):
            if not used[j] and ref == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor_lite(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> float:
    """METEOR-style score with exact matches only (no stemming or synonyms)."""
    pairs = align_exact(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = 10 * p * r / (r + 9 * p)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)
