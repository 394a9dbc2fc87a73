"""Experiment configuration as a single INI file.

Example::

    [run]
    objective = ce_sonar
    train_corpus = train.txt
    val_corpus = val.txt
    seed = 0
    out = runs/ce

    [codec]
    d = 32

    [codec_train]
    steps = 1000

    [model]
    d_model = 64
    n_layers = 4

    [train]
    epochs = 4

Unknown sections or keys are rejected so that typos do not silently fall
back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field

from .codec import CodecConfig, CodecTrainConfig
from .errors import ConfigError
from .model import ConceptModelConfig
from .training import OBJECTIVES, TrainConfig


@dataclass(frozen=True)
class CodecDims:
    """Codec sizes without the vocabulary, which is only known once the corpus is read."""

    d: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    max_sentence_tokens: int = 64
    rope_base: float = 10000.0

    def with_vocab(self, vocab_size: int) -> CodecConfig:
        return CodecConfig(vocab_size=vocab_size, **dataclasses.asdict(self))


@dataclass(frozen=True)
class RunSection:
    objective: str = "ce_sonar"
    train_corpus: str = ""
    val_corpus: str = ""
    seed: int = 0
    out: str = "run"
    max_vocab: int = 4096


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    codec: CodecDims = field(default_factory=CodecDims)
    codec_train: CodecTrainConfig = field(default_factory=CodecTrainConfig)
    model: ConceptModelConfig = field(default_factory=ConceptModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.run.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.run.objective!r}")
        if self.model.d_embed != self.codec.d:
            raise ConfigError(f"model d_embed {self.model.d_embed} must equal codec width {self.codec.d}")

    def with_overrides(self, *, seed: int | None = None, objective: str | None = None,
                       out: str | None = None, epochs: int | None = None) -> "ExperimentConfig":
        """Apply command-line flags; ``seed`` drives the codec, model and data order together."""
        run, codec_train, train = self.run, self.codec_train, self.train
        if seed is not None:
            run = dataclasses.replace(run, seed=seed)
            codec_train = dataclasses.replace(codec_train, seed=seed)
            train = dataclasses.replace(train, seed=seed)
        if objective is not None:
            run = dataclasses.replace(run, objective=objective)
        if out is not None:
            run = dataclasses.replace(run, out=out)
        if epochs is not None:
            train = dataclasses.replace(train, epochs=epochs)
        return dataclasses.replace(self, run=run, codec_train=codec_train, train=train)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def to_ini(self) -> str:
        lines = []
        for name in _SECTIONS:
            lines.append(f"[{name}]")
            for key, value in dataclasses.asdict(getattr(self, name)).items():
                lines.append(f"{key} = {'none' if value is None else value}")
            lines.append("")
        return "\n".join(lines)


_SECTIONS = {
    "run": RunSection,
    "codec": CodecDims,
    "codec_train": CodecTrainConfig,
    "model": ConceptModelConfig,
    "train": TrainConfig,
}


def _coerce(raw: str, hint, where: str):
    optional = type(None) in typing.get_args(hint)
    if optional:
        if raw.strip().lower() in ("none", ""):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {hint.__name__}") from exc
    return raw.strip()


def _section(cls, items: dict[str, str], name: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"[{name}] has unknown key(s): {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(v, hints[k], f"[{name}] {k}") for k, v in items.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    parts = {name: _section(cls, dict(parser[name]) if parser.has_section(name) else {}, name)
             for name, cls in _SECTIONS.items()}
    return ExperimentConfig(**parts)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
