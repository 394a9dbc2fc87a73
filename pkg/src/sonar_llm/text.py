"""Sentence segmentation, word-level vocabulary, and a synthetic story corpus."""

from __future__ import annotations

import logging
import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
SENTINEL = "End of sequence."
DEFAULT_MAX_SENTENCE_TOKENS = 64

ABBREVIATIONS = frozenset({"mr.", "mrs.", "dr.", "st.", "vs.", "etc.", "e.g.", "i.e."})

# terminator run, optional closing quotes/brackets, then whitespace + capital or end of text
_BOUNDARY = re.compile(r"[.!?]+[\"')\]]*(?=\s+[\"'(\[]?[A-Z]|\s*$)")
_TOKEN = re.compile(r"\w+(?:'\w+)*|[^\w\s]")
_WS = re.compile(r"\s+")

_ATTACH_LEFT = set(".,!?;:)]}%")
_ATTACH_RIGHT = set("([{$")


def segment_sentences(text: str) -> list[str]:
    """Split ``text`` after ``.``, ``!`` or ``?`` when the next word is capitalised.

    A single period ending a known abbreviation (``Dr.``, ``e.g.`` ...) never
    closes a sentence.
    """
    out: list[str] = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        if m.group(0) == ".":
            words = text[start:m.end()].split()
            if words and words[-1].lower() in ABBREVIATIONS:
                continue
        piece = text[start:m.end()].strip()
        if piece:
            out.append(piece)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


def tokenize(text: str) -> list[str]:
    """Whitespace split with every punctuation mark detached as its own token."""
    return _TOKEN.findall(text)


def detokenize(tokens: Sequence[str]) -> str:
    parts: list[str] = []
    glue_next = False
    open_quote = False
    for tok in tokens:
        if tok == '"':
            if open_quote:
                parts.append(tok)
                open_quote = False
                glue_next = False
            else:
                if parts:
                    parts.append(" ")
                parts.append(tok)
                open_quote = True
                glue_next = True
            continue
        if parts and not glue_next and tok not in _ATTACH_LEFT:
            parts.append(" ")
        parts.append(tok)
        glue_next = tok in _ATTACH_RIGHT
    return "".join(parts)


@dataclass(frozen=True)
class Document:
    sentences: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def content(self) -> tuple[str, ...]:
        """Sentences without the trailing sentinel."""
        return self.sentences[:-1]


def make_document(sentences: Iterable[str], sentinel: str = SENTINEL) -> Document:
    """Build a document ending with exactly one ``sentinel`` sentence."""
    body = [normalize_whitespace(s) for s in sentences if s.strip()]
    while body and body[-1] == sentinel:
        body.pop()
    return Document(tuple(body) + (sentinel,))


def document_from_text(text: str, sentinel: str = SENTINEL) -> Document:
    return make_document(segment_sentences(text), sentinel)


@dataclass(frozen=True)
class Vocabulary:
    token_of: tuple[str, ...]

    def __post_init__(self):
        if self.token_of[:4] != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(self.token_of)) != len(self.token_of):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "id_of", {t: i for i, t in enumerate(self.token_of)})

    def __len__(self) -> int:
        return len(self.token_of)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of


def build_vocab(corpus: Iterable[Document | str], max_size: int = 4096) -> Vocabulary:
    """Keep the ``max_size - 4`` most frequent tokens; ties go to the lexicographically smaller."""
    if max_size < 5:
        raise ValueError(f"max_size must be at least 5, got {max_size}")
    counts: Counter[str] = Counter()
    for doc in corpus:
        sentences = (doc,) if isinstance(doc, str) else doc.sentences
        for s in sentences:
            counts.update(t for t in tokenize(s) if t not in RESERVED)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, _ in ranked[: max_size - len(RESERVED)]]
    return Vocabulary(RESERVED + tuple(kept))


def encode_tokens(text: str, vocab: Vocabulary, max_len: int | None = None) -> list[int]:
    """BOS + token ids + EOS.  Over-long sentences are cut to ``max_len - 1`` ids then EOS."""
    ids = [BOS] + [vocab.id_of.get(t, UNK) for t in tokenize(text)] + [EOS]
    if max_len is not None and len(ids) > max_len:
        log.warning("sentence of %d tokens truncated to %d", len(ids), max_len)
        ids = ids[: max_len - 1] + [EOS]
    return ids


def decode_tokens(ids: Sequence[int], vocab: Vocabulary) -> str:
    n = len(vocab)
    words = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= n:
            raise IndexError(f"token id {i} outside vocabulary of size {n}")
        if i in (PAD, BOS, EOS):
            continue
        words.append(vocab.token_of[i])
    return detokenize(words)


@dataclass(frozen=True)
class SentenceSpan:
    text: str
    tokens: tuple[int, ...]


def frame_document(doc: Document, vocab: Vocabulary,
                   max_sentence_tokens: int = DEFAULT_MAX_SENTENCE_TOKENS) -> list[SentenceSpan]:
    return [SentenceSpan(s, tuple(encode_tokens(s, vocab, max_sentence_tokens))) for s in doc.sentences]


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

BOYS = ("Tom", "Ben", "Sam", "Max")
GIRLS = ("Lily", "Mia", "Anna", "Sue")
SIZES = ("big", "little", "small", "tall")
COLORS = ("red", "blue", "green", "yellow")
OBJECTS = ("ball", "kite", "book", "hat", "box", "toy")
PLACES = ("park", "farm", "beach", "forest")
ANIMALS = ("dog", "cat", "bird", "duck", "frog", "bunny")
FEELINGS = ("sad", "hungry", "tired", "scared")

INTRO = "Once upon a time there was a {size} {kind} named {name}."
EVENTS = (
    "{Pron} had a {color} {obj}.",
    "{Pron} loved {poss} {obj} very much.",
    "One day {name} went to the {place}.",
    "At the {place} {pron} saw a {size2} {animal}.",
    "The {animal} looked {feeling}.",
    "{name} gave the {obj} to the {animal}.",
    "The {animal} was very happy.",
    "They played together all day.",
    "Then {name} went home with {poss} mom.",
)


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def generate_synthetic_corpus(seed: int, n_docs: int, sentinel: str = SENTINEL) -> list[Document]:
    """Deterministic toy stories of 3-10 sentences with consistent entity references.

    Each story is an intro followed by a suffix of a fixed event script, so the
    next sentence is predictable from what came before and every story ends
    with the same closing event.
    """
    if n_docs < 1:
        raise ValueError("n_docs must be at least 1")
    rng = np.random.default_rng(seed)
    docs = []
    for _ in range(n_docs):
        girl = bool(rng.integers(2))
        slots = {
            "name": _pick(rng, GIRLS if girl else BOYS),
            "kind": "girl" if girl else "boy",
            "Pron": "She" if girl else "He",
            "pron": "she" if girl else "he",
            "poss": "her" if girl else "his",
            "size": _pick(rng, SIZES),
            "size2": _pick(rng, SIZES),
            "color": _pick(rng, COLORS),
            "obj": _pick(rng, OBJECTS),
            "place": _pick(rng, PLACES),
            "animal": _pick(rng, ANIMALS),
            "feeling": _pick(rng, FEELINGS),
        }
        start = int(rng.integers(0, len(EVENTS) - 1))
        body = [INTRO.format(**slots)] + [e.format(**slots) for e in EVENTS[start:]]
        docs.append(make_document(body, sentinel))
    return docs


def synthetic_word_list() -> set[str]:
    """Every surface token the generator can emit, sentinel excluded."""
    words: set[str] = set()
    for group in (BOYS, GIRLS, SIZES, COLORS, OBJECTS, PLACES, ANIMALS, FEELINGS,
                  ("boy", "girl", "He", "She", "he", "she", "his", "her")):
        words.update(group)
    for template in (INTRO,) + EVENTS:
        words.update(t for t in tokenize(re.sub(r"\{\w+\}", " ", template)))
    return words


# ---------------------------------------------------------------------------
# corpus files: UTF-8, one document per paragraph, blank-line separated
# ---------------------------------------------------------------------------

def write_corpus(path: str | os.PathLike, docs: Iterable[Document]) -> None:
    text = "\n\n".join(" ".join(d.content) for d in docs) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def read_corpus(path: str | os.PathLike, sentinel: str = SENTINEL) -> list[Document]:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    blocks = [b for b in re.split(r"\n[ \t]*\n", raw) if b.strip()]
    return [document_from_text(b, sentinel) for b in blocks]


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
