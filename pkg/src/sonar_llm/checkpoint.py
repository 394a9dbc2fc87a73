"""Versioned single-file checkpoint format.

Layout (all integers little-endian)::

    b"SONLLM1"                      magic, 7 bytes
    u32 version
    u64 n, n bytes                  UTF-8 JSON configuration
    u64 n, n bytes                  UTF-8 JSON list of vocabulary tokens (may be empty)
    u32 count                       number of weight arrays, then per array:
        u16 n, n bytes              UTF-8 name
        u8 ndim, ndim x u64         shape
        prod(shape) x f64           row-major data
    32 bytes                        SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecConfig, SentenceCodec
from .errors import CheckpointFormatError
from .model import ConceptModelConfig, ConceptTransformer, TokenLM
from .text import Vocabulary, atomic_write_bytes

MAGIC = b"SONLLM1"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    vocab: Vocabulary | None = None
    weights: dict[str, np.ndarray] = field(default_factory=dict)


def dumps(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    voc = json.dumps(list(ckpt.vocab.token_of) if ckpt.vocab else []).encode("utf-8")
    parts += [struct.pack("<Q", len(cfg)), cfg, struct.pack("<Q", len(voc)), voc]
    parts.append(struct.pack("<I", len(ckpt.weights)))
    for name in sorted(ckpt.weights):
        arr = np.asarray(ckpt.weights[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
        parts += [struct.pack("<Q", s) for s in arr.shape]
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def loads(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 4 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    r = _Reader(buf)
    r.take(len(MAGIC))
    version = r.unpack("<I")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(r.unpack("<Q")).decode("utf-8"))
        tokens = json.loads(r.take(r.unpack("<Q")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from exc
    weights = {}
    for _ in range(r.unpack("<I")):
        name = r.take(r.unpack("<H")).decode("utf-8")
        shape = tuple(r.unpack("<Q") for _ in range(r.unpack("<B")))
        count = int(np.prod(shape)) if shape else 1
        weights[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    digest = r.take(32)
    if hashlib.sha256(buf[: r.pos - 32]).digest() != digest:
        raise CheckpointFormatError("checkpoint checksum mismatch")
    if r.pos != len(buf):
        raise CheckpointFormatError("trailing bytes after checkpoint")
    vocab = Vocabulary(tuple(tokens)) if tokens else None
    return Checkpoint(config, vocab, weights)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, dumps(ckpt))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())


# ---------------------------------------------------------------------------
# model <-> checkpoint
# ---------------------------------------------------------------------------

def codec_checkpoint(codec: SentenceCodec, vocab: Vocabulary, extra: dict | None = None) -> Checkpoint:
    config = {"kind": "codec", "codec": codec.cfg.to_dict(), **(extra or {})}
    weights = {f"codec.{k}": p.data for k, p in codec.params.items()}
    return Checkpoint(config, vocab, weights)


def model_checkpoint(model, codec: SentenceCodec | None, vocab: Vocabulary, objective: str,
                     extra: dict | None = None) -> Checkpoint:
    """Model weights plus, for concept models, the frozen codec they were trained against."""
    ckpt = codec_checkpoint(codec, vocab) if codec is not None else Checkpoint({}, vocab)
    ckpt.config.update({"kind": "model", "objective": objective, "model": model.cfg.to_dict(),
                        "vocab_size": len(vocab), **(extra or {})})
    ckpt.weights.update({f"model.{k}": p.data for k, p in model.params.items()})
    return ckpt


def restore_codec(ckpt: Checkpoint) -> SentenceCodec:
    if "codec" not in ckpt.config:
        raise CheckpointFormatError("checkpoint has no codec section")
    codec = SentenceCodec(CodecConfig(**ckpt.config["codec"]))
    try:
        codec.load_weights({k[len("codec."):]: v for k, v in ckpt.weights.items() if k.startswith("codec.")})
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(str(exc)) from exc
    return codec.freeze()


def restore_model(ckpt: Checkpoint):
    if ckpt.config.get("kind") != "model":
        raise CheckpointFormatError("checkpoint holds no trained model")
    cfg = ConceptModelConfig(**ckpt.config["model"])
    objective = ckpt.config["objective"]
    if objective == "token_ce":
        model = TokenLM(cfg, ckpt.config["vocab_size"])
    else:
        model = ConceptTransformer(cfg)
    for name, p in model.params.items():
        key = f"model.{name}"
        if key not in ckpt.weights:
            raise CheckpointFormatError(f"missing model weight {name!r}")
        if ckpt.weights[key].shape != p.shape:
            raise CheckpointFormatError(f"model weight {name!r} has the wrong shape")
        p.data = ckpt.weights[key].copy()
    return model
