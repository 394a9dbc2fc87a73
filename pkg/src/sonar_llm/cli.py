"""``sonar-llm`` command-line entry point.

Exit status: 0 on success, 1 for usage errors, 2 when a command fails at run time.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from typing import Sequence

from . import analysis
from .checkpoint import (codec_checkpoint, load_checkpoint, model_checkpoint, restore_codec,
                         restore_model, save_checkpoint)
from .codec import pretrain_codec, reconstruction_accuracy
from .config import ExperimentConfig, load_config
from .errors import CheckpointFormatError, ConfigError, ContractError, ShapeError, TrainingDiverged
from .harness import concept_predictor, next_sentence_harness, token_predictor
from .inference import generate, generate_tokens, sentinel_rule
from .text import (atomic_write_bytes, build_vocab, encode_tokens, generate_synthetic_corpus,
                   read_corpus, write_corpus)
from .training import OBJECTIVES, encode_corpus, train_run

log = logging.getLogger("sonar_llm")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed if args.seed is not None else cfg.run.seed,
                              objective=getattr(args, "objective", None),
                              out=args.out, epochs=getattr(args, "epochs", None))


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        atomic_write_bytes(path, text.encode("utf-8"))


def _train_codec(cfg: ExperimentConfig, docs, steps: int | None = None):
    vocab = build_vocab(docs, cfg.run.max_vocab)
    codec_cfg = cfg.codec.with_vocab(len(vocab))
    train_cfg = cfg.codec_train
    if steps is not None:
        train_cfg = dataclasses.replace(train_cfg, steps=steps)
    codec = pretrain_codec(docs, vocab, codec_cfg, train_cfg)
    return vocab, codec


def _reencode_check(codec, vocab, docs, limit: int = 2000) -> float:
    m = codec.cfg.max_sentence_tokens
    toks = [encode_tokens(s, vocab, m) for d in docs for s in d.sentences][:limit]
    return reconstruction_accuracy(codec, toks)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    seed = args.seed if args.seed is not None else 0
    docs = generate_synthetic_corpus(seed, args.n_docs)
    if args.out is None:
        raise UsageError("gen-corpus needs --out PATH")
    write_corpus(args.out, docs)
    print(f"wrote {len(docs)} documents to {args.out}")
    return EXIT_OK


def cmd_pretrain_codec(args) -> int:
    cfg = _config(args)
    path = args.corpus or cfg.run.train_corpus
    if not path:
        raise UsageError("pretrain-codec needs --corpus PATH or [run] train_corpus")
    docs = read_corpus(path)
    vocab, codec = _train_codec(cfg, docs, args.steps)
    acc = _reencode_check(codec, vocab, docs)
    out = args.out or "codec.ckpt"
    save_checkpoint(out, codec_checkpoint(codec, vocab, {"experiment": cfg.to_dict()}))
    print(f"vocab={len(vocab)} params={codec.param_count()} reconstruction_accuracy={acc:.6f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    objective = cfg.run.objective
    train_path = args.train_corpus or cfg.run.train_corpus
    val_path = args.val_corpus or cfg.run.val_corpus
    if not train_path or not val_path:
        raise UsageError("train needs --train-corpus and --val-corpus (or [run] entries)")
    train_docs, val_docs = read_corpus(train_path), read_corpus(val_path)
    if args.codec:
        ckpt = load_checkpoint(args.codec)
        vocab, codec = ckpt.vocab, restore_codec(ckpt)
        if vocab is None:
            raise CheckpointFormatError(f"{args.codec} carries no vocabulary")
    elif objective == "token_ce":
        vocab, codec = build_vocab(train_docs, cfg.run.max_vocab), None
    else:
        vocab, codec = _train_codec(cfg, train_docs)
    if codec is not None and cfg.model.d_embed != codec.cfg.d:
        raise ConfigError(f"model d_embed {cfg.model.d_embed} does not match codec width {codec.cfg.d}")
    m = codec.cfg.max_sentence_tokens if codec is not None else cfg.codec.max_sentence_tokens
    tr = encode_corpus(train_docs, vocab, codec, m)
    va = encode_corpus(val_docs, vocab, codec, m)
    result = train_run(objective, tr, va, cfg.model, cfg.train, codec=codec, vocab_size=len(vocab))
    os.makedirs(cfg.run.out, exist_ok=True)
    ckpt = model_checkpoint(result.model, codec, vocab, objective,
                            {"train": cfg.train.to_dict(), "experiment": cfg.to_dict()})
    save_checkpoint(os.path.join(cfg.run.out, "model.ckpt"), ckpt)
    atomic_write_bytes(os.path.join(cfg.run.out, "metrics.csv"), result.report.to_csv().encode("utf-8"))
    atomic_write_bytes(os.path.join(cfg.run.out, "config.ini"), cfg.to_ini().encode("utf-8"))
    last = result.report.epochs[-1]
    print(f"objective={objective} epochs={last[0]} train_loss={last[1]:.6f} val_loss={last[2]:.6f}")
    print(f"wrote {cfg.run.out}/model.ckpt and {cfg.run.out}/metrics.csv")
    return EXIT_OK


def _load_trained(path: str):
    ckpt = load_checkpoint(path)
    model = restore_model(ckpt)
    codec = restore_codec(ckpt) if "codec" in ckpt.config else None
    if ckpt.vocab is None:
        raise CheckpointFormatError(f"{path} carries no vocabulary")
    return ckpt, model, codec


def cmd_generate(args) -> int:
    ckpt, model, codec = _load_trained(args.checkpoint)
    prompt = args.prompt if args.prompt is not None else sys.stdin.read()
    if ckpt.config["objective"] == "token_ce":
        result = generate_tokens(model, ckpt.vocab, prompt, args.t_max)
    else:
        rule = sentinel_rule(codec, ckpt.vocab, args.tau, args.t_max)
        result = generate(model, codec, ckpt.vocab, prompt, rule)
    _write_text(args.out, result.render())
    return EXIT_OK


def cmd_eval_nlg(args) -> int:
    ckpt, model, codec = _load_trained(args.checkpoint)
    docs = read_corpus(args.corpus)
    if args.limit is not None:
        docs = docs[: args.limit]
    if ckpt.config["objective"] == "token_ce":
        predict = token_predictor(model, ckpt.vocab)
    else:
        predict = concept_predictor(model, codec, ckpt.vocab)
    report = next_sentence_harness(predict, docs, args.prefix)
    _write_text(args.out, report.to_csv())
    print(f"bleu={report.bleu:.6f} rouge_l={report.rouge_l:.6f} meteor={report.meteor:.6f} "
          f"n={len(report.rows)} skipped={report.skipped}", file=sys.stderr)
    return EXIT_OK


def read_points(path: str) -> list[tuple[float, float]]:
    """Read ``N,L`` rows; a non-numeric first row is treated as a header."""
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            try:
                n, loss = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise ContractError(f"{path}:{i + 1}: expected 'N,L', got {row!r}")
            points.append((n, loss))
    return points


def cmd_fit_scaling(args) -> int:
    fit = analysis.fit_scaling_law(read_points(args.points))
    text = f"a={fit.a!r}\nalpha={fit.alpha!r}\nb={fit.b!r}\nr2={fit.r2!r}\n"
    if fit.degenerate:
        text += "# degenerate: losses are constant\n"
    _write_text(args.out, text)
    return EXIT_OK


def _shape(prefix: str, args, d_embed: int = 0) -> analysis.ArchShape:
    get = lambda k: getattr(args, f"{prefix}_{k}")  # noqa: E731
    return analysis.ArchShape(get("layers"), get("d"), get("heads"), get("ffn_mult"), d_embed=d_embed)


def cmd_flops(args) -> int:
    if args.t_max < 1:
        raise UsageError("--t-max must be >= 1")
    token = _shape("llm", args)
    fm = analysis.FlopsModel(_shape("concept", args, d_embed=args.enc_d),
                             _shape("enc", args), _shape("dec", args), args.lam)
    _write_text(args.out, analysis.flops_csv(token, fm, args.t_max, args.grid, args.stride))
    if args.t_max >= 2:
        cross = analysis.crossover_search(token, fm, args.t_max)
        print(f"# crossover={cross.length}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_objective

    seed = args.seed if args.seed is not None else 0
    objectives = OBJECTIVES if args.objective == "all" else (args.objective,)
    ok = True
    for obj in objectives:
        r = check_objective(obj, seed)
        ok &= r.passed
        print(f"{obj}: rel_err={r.rel_err:.3e} params={r.n_params} time={r.seconds:.2f}s "
              f"{'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_shape(p, prefix: str, label: str, layers: int, d: int, heads: int) -> None:
    p.add_argument(f"--{prefix}-layers", type=int, default=layers, help=f"{label} layers")
    p.add_argument(f"--{prefix}-d", type=int, default=d, help=f"{label} width")
    p.add_argument(f"--{prefix}-heads", type=int, default=heads, help=f"{label} heads")
    p.add_argument(f"--{prefix}-ffn-mult", type=int, default=4, help=f"{label} FFN multiplier")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: config or 0)")
    common.add_argument("--config", default=None, help="INI experiment config")
    common.add_argument("--out", default=None, help="output path (file or directory, per command)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="sonar-llm", description="Sentence-level language modelling toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic story corpus")
    p.add_argument("--n-docs", type=int, default=500)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain-codec", parents=[common], help="train and freeze the sentence codec")
    p.add_argument("--corpus", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_pretrain_codec)

    p = sub.add_parser("train", parents=[common], help="train a concept or token model")
    p.add_argument("--objective", choices=OBJECTIVES, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--train-corpus", default=None)
    p.add_argument("--val-corpus", default=None)
    p.add_argument("--codec", default=None, help="codec checkpoint from pretrain-codec")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="continue a prompt sentence by sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", default=None, help="prompt text (default: read stdin)")
    p.add_argument("--tau", type=float, default=0.98, help="sentinel cosine threshold")
    p.add_argument("--t-max", type=int, default=32)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-nlg", parents=[common], help="next-sentence BLEU / ROUGE-L / METEOR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--prefix", choices=("short", "long"), default="short")
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_eval_nlg)

    p = sub.add_parser("fit-scaling", parents=[common], help="fit L(N) = a N^-alpha + b")
    p.add_argument("points", help="CSV of N,L rows")
    p.set_defaults(func=cmd_fit_scaling)

    p = sub.add_parser("flops", parents=[common], help="inference FLOPs table as CSV")
    p.add_argument("--t-max", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=int, default=60, help="average sentence length in tokens")
    p.add_argument("--grid", choices=("pow2", "linear"), default="pow2")
    p.add_argument("--stride", type=int, default=1)
    _add_shape(p, "llm", "token model", 24, 1280, 20)
    _add_shape(p, "concept", "concept model", 24, 1280, 20)
    _add_shape(p, "enc", "sentence encoder", 24, 1024, 16)
    _add_shape(p, "dec", "sentence decoder", 24, 1024, 16)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every objective")
    p.add_argument("--objective", choices=OBJECTIVES + ("all",), default="all")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sonar-llm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointFormatError, ContractError, ShapeError, TrainingDiverged,
            OverflowError, OSError, ValueError, KeyError, IndexError) as exc:
        print(f"sonar-llm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
