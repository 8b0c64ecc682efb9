"""Command-line entry point: one binary, subcommand per pipeline stage.

Every option resolves as CLI flag > config-file value > built-in default;
the config file is a flat JSON object whose keys must match the
subcommand's option names (unknown keys are rejected), and each run echoes
its fully-resolved option set to stderr.  Exit codes: 0 success, 2
configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .control import ControlScheme, annotate, scheme_from_record
from .decoding import GenConfig, generate_many
from .errors import ConfigError, DataError, NumericError
from .evaluation import evaluate, fixed_length_sweep, predict_lengths
from .model import ModelConfig, load_model, round_length
from .positions import SCHEME_FORWARD, SCHEME_REVERSE
from .synth import SynthSpec, generate_synthetic_corpus
from .text import (ControlledExample, Document, build_vocab, read_corpus,
                   read_documents, write_corpus)
from .training import TrainConfig, fit_scheme, train

SCHEME_CHOICES = ("none", "repilot", "sentenum", "sentprefix", "buckets")
UNIT_CHOICES = ("tokens", "sentences")


def _opt(sub: argparse.ArgumentParser, defaults: dict, *flags,
         default=None, **kwargs):
    """Register an option with its real default kept aside, so we can tell
    'flag given' (non-None) from 'use config file or default' (None)."""
    action = sub.add_argument(*flags, default=None, **kwargs)
    defaults[action.dest] = default
    return action


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge CLI > config file > defaults; reject unknown config keys."""
    file_values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid "
                              f"JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {config_path} must hold a "
                              f"JSON object")
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
        elif key in file_values:
            resolved[key] = file_values[key]
        else:
            resolved[key] = default
    print("resolved-config " + json.dumps(resolved, sort_keys=True,
                                          default=str), file=sys.stderr)
    return resolved


def _require(resolved: dict, *keys: str) -> None:
    missing = [k for k in keys if resolved.get(k) is None]
    if missing:
        raise ConfigError(f"missing required option(s): "
                          f"{', '.join('--' + k.replace('_', '-') for k in missing)}")


def _parse_floats(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).split(","))


def _parse_lengths(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    text = str(value)
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in text.split(","))


def _build_scheme(name: str, unit: str | None) -> ControlScheme:
    if unit is None:
        unit = "sentences" if name in ("sentenum", "sentprefix") else "tokens"
    return ControlScheme(name=name, unit=unit)


def _load_checkpoint(path: str):
    params, vocab, record = load_model(path)
    scheme = (scheme_from_record(record) if record
              else ControlScheme("none"))
    return params, vocab, scheme


def _gen_config(resolved: dict, length_source: str = "user") -> GenConfig:
    return GenConfig(mode=resolved["mode"],
                     beam_width=int(resolved["beam_width"]),
                     length_penalty=float(resolved["length_penalty"]),
                     ngram_block=(None if resolved["ngram_block"] in (None, 0)
                                  else int(resolved["ngram_block"])),
                     max_steps=int(resolved["max_steps"]),
                     length_source=length_source)


def _add_gen_flags(sub, defaults) -> None:
    _opt(sub, defaults, "--mode", default="greedy",
         choices=("greedy", "beam"), help="decoding mode")
    _opt(sub, defaults, "--beam-width", default=3, type=int,
         help="beam width (beam mode)")
    _opt(sub, defaults, "--length-penalty", default=0.0, type=float,
         help="beam length-penalty exponent; 0 disables")
    _opt(sub, defaults, "--ngram-block", default=0, type=int,
         help="forbid repeating n-grams of this size; 0 disables")
    _opt(sub, defaults, "--max-steps", default=0, type=int,
         help="decode step cap; 0 means the model's max target length")


def cmd_gen_data(resolved: dict) -> int:
    _require(resolved, "out")
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = int(resolved["seed"])
    weights = (_parse_floats(resolved["length_weights"])
               if resolved["length_weights"] is not None else None)
    splits = (("train", int(resolved["train_size"]), 0),
              ("dev", int(resolved["dev_size"]), 1),
              ("test", int(resolved["test_size"]), 2))
    for name, size, offset in splits:
        if size == 0:
            continue
        kwargs = dict(size=size,
                      min_doc_sentences=int(resolved["min_doc_sentences"]),
                      max_doc_sentences=int(resolved["max_doc_sentences"]))
        if weights is not None:
            kwargs["length_weights"] = weights
        spec = SynthSpec(**kwargs)
        examples = generate_synthetic_corpus(spec, seed + offset)
        path = out / f"{name}.jsonl"
        write_corpus(path, examples)
        print(f"wrote {len(examples)} examples to {path}")
    return 0


def cmd_preprocess(resolved: dict) -> int:
    _require(resolved, "in_path", "out", "scheme")
    examples = read_corpus(resolved["in_path"])
    scheme = _build_scheme(resolved["scheme"], resolved["unit"])
    scheme = fit_scheme(scheme, examples, int(resolved["num_buckets"]))
    textual = scheme.name in ("sentenum", "sentprefix", "buckets")
    annotated = []
    for ex in examples:
        annotated.append(ControlledExample(
            document=ex.document,
            summary=Document.from_text(annotate(ex, scheme)),
            gold_tokens=ex.gold_tokens, gold_sents=ex.gold_sents,
            control=scheme.name if textual else "none"))
    write_corpus(resolved["out"], annotated)
    if scheme.bucket_edges:
        print(f"bucket edges: {list(scheme.bucket_edges)}")
    print(f"wrote {len(annotated)} examples to {resolved['out']}")
    return 0


def cmd_train(resolved: dict) -> int:
    _require(resolved, "train", "dev", "out")
    train_examples = read_corpus(resolved["train"])
    dev_examples = read_corpus(resolved["dev"])
    scheme = _build_scheme(resolved["scheme"], resolved["unit"])
    scheme = fit_scheme(scheme, train_examples, int(resolved["num_buckets"]))
    lam = float(resolved["lam"])
    length_head = resolved["length_head"]
    if length_head is None:
        length_head = lam > 0.0
    texts = [ex.document.text for ex in train_examples]
    texts += [ex.summary.text for ex in train_examples]
    vocab = build_vocab(texts, int(resolved["vocab_size"]))
    model_config = ModelConfig(
        vocab_size=len(vocab.id_to_token),
        d_model=int(resolved["d_model"]),
        num_encoder_layers=int(resolved["encoder_layers"]),
        num_decoder_layers=int(resolved["decoder_layers"]),
        num_heads=int(resolved["heads"]),
        ffn_width=int(resolved["ffn_width"]),
        max_src_len=int(resolved["max_src_len"]),
        max_tgt_len=int(resolved["max_tgt_len"]),
        position_scheme=(SCHEME_REVERSE if scheme.name == "repilot"
                         else SCHEME_FORWARD),
        length_head=bool(length_head),
        length_head_width=int(resolved["length_head_width"]),
        dropout=float(resolved["dropout"]),
    )
    train_config = TrainConfig(
        epochs=int(resolved["epochs"]),
        batch_size=int(resolved["batch_size"]),
        learning_rate=float(resolved["learning_rate"]),
        lam=lam,
        seed=int(resolved["seed"]),
        scheme=scheme,
        noise=bool(resolved["noise"]),
        patience=int(resolved["patience"]),
    )
    result = train(train_examples, dev_examples, vocab, model_config,
                   train_config, resolved["out"])
    last = result.metrics[-1]
    print(f"trained {len(result.metrics)} epochs "
          f"(best epoch {result.best_epoch}, "
          f"early stop: {result.stopped_early})")
    print(f"final dev selection loss {last.dev_selection:.6f}")
    print(f"checkpoints: {result.best_path}, {result.last_path}")
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_generate(resolved: dict) -> int:
    _require(resolved, "ckpt", "in_path", "out")
    params, vocab, scheme = _load_checkpoint(resolved["ckpt"])
    docs = read_documents(resolved["in_path"])
    length = resolved["length"]
    predict = bool(resolved["predict_length"])
    if predict and length is not None:
        raise ConfigError("--length and --predict-length are mutually "
                          "exclusive")
    gen = _gen_config(resolved, "predicted" if predict else "user")
    requested = None if length is None else [int(length)] * len(docs)
    outputs = generate_many(params, docs, scheme, gen, vocab, requested)
    with open(resolved["out"], "w", encoding="utf-8") as fh:
        for out in outputs:
            fh.write(json.dumps(out.to_dict()) + "\n")
    print(f"wrote {len(outputs)} generations to {resolved['out']}")
    return 0


def cmd_predict_length(resolved: dict) -> int:
    _require(resolved, "ckpt", "in_path")
    params, vocab, scheme = _load_checkpoint(resolved["ckpt"])
    docs = read_documents(resolved["in_path"])
    rows: list[dict] = []
    if params.config.length_head:
        raw = predict_lengths(params, docs, vocab)
        rows = [{"pred_len": round_length(v), "raw": float(v)} for v in raw]
    elif scheme.name in ("sentenum", "sentprefix"):
        gen = GenConfig(length_source="predicted")
        outputs = generate_many(params, docs, scheme, gen, vocab)
        rows = [{"pred_len": (out.claimed_len if out.claimed_len is not None
                              else out.gen_sents),
                 "raw": None} for out in outputs]
    else:
        raise ConfigError("this checkpoint predicts no lengths: it has no "
                          "length head and no sentence-prefix scheme")
    for row in rows:
        print(row["pred_len"])
    if resolved["out"] is not None:
        with open(resolved["out"], "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return 0


def cmd_evaluate(resolved: dict) -> int:
    _require(resolved, "ckpt", "test")
    params, vocab, scheme = _load_checkpoint(resolved["ckpt"])
    if resolved["scheme"] is not None and resolved["scheme"] != scheme.name:
        raise ConfigError(f"checkpoint was trained for scheme "
                          f"{scheme.name!r}, not {resolved['scheme']!r}")
    unit = resolved["unit"]
    if unit is not None and unit != scheme.unit:
        if scheme.name != "none":
            raise ConfigError(f"scheme {scheme.name!r} is measured in "
                              f"{scheme.unit}; cannot switch to {unit}")
        scheme = ControlScheme("none", unit=unit)
    examples = read_corpus(resolved["test"])
    gen = _gen_config(resolved)
    report, _ = evaluate(params, examples, scheme, gen, vocab,
                         out_jsonl=resolved["per_example"],
                         curve_csv=resolved["curve"],
                         oracle=bool(resolved["oracle"]))
    text = json.dumps(report.to_dict(), indent=2)
    print(text)
    if resolved["report"] is not None:
        with open(resolved["report"], "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def cmd_sweep(resolved: dict) -> int:
    _require(resolved, "ckpt", "in_path")
    params, vocab, scheme = _load_checkpoint(resolved["ckpt"])
    docs = read_documents(resolved["in_path"])
    lengths = _parse_lengths(resolved["lengths"])
    gen = _gen_config(resolved)
    rows = fixed_length_sweep(params, docs, scheme, gen, vocab, lengths,
                              csv_path=resolved["out"])
    print("length accuracy count")
    for row in rows:
        print(f"{row.length} {row.accuracy:.4f} {row.count}")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="lenctl",
        description="length-controlled text generation laboratory")
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, tuple[dict, object]] = {}

    def new_command(name: str, func, help_text: str):
        sub = subs.add_parser(name, help=help_text)
        sub.add_argument("--config", default=None,
                         help="JSON file with option defaults")
        defaults: dict = {}
        registry[name] = (defaults, func)
        return sub, defaults

    sub, d = new_command("gen-data", cmd_gen_data,
                         "emit a synthetic corpus (train/dev/test)")
    _opt(sub, d, "--out", help="output directory")
    _opt(sub, d, "--seed", default=0, type=int)
    _opt(sub, d, "--train-size", default=5000, type=int)
    _opt(sub, d, "--dev-size", default=200, type=int)
    _opt(sub, d, "--test-size", default=400, type=int)
    _opt(sub, d, "--min-doc-sentences", default=8, type=int)
    _opt(sub, d, "--max-doc-sentences", default=20, type=int)
    _opt(sub, d, "--length-weights", default=None,
         help="comma-separated summary-length weights (lengths 1..k)")

    sub, d = new_command("preprocess", cmd_preprocess,
                         "write control-annotated copies of a corpus")
    _opt(sub, d, "--in", dest="in_path", help="input corpus JSONL")
    _opt(sub, d, "--out", help="output JSONL")
    _opt(sub, d, "--scheme", choices=SCHEME_CHOICES)
    _opt(sub, d, "--unit", choices=UNIT_CHOICES,
         help="length unit (buckets/none; other schemes are fixed)")
    _opt(sub, d, "--num-buckets", default=10, type=int)

    sub, d = new_command("train", cmd_train,
                         "train a model, write checkpoints + metrics")
    _opt(sub, d, "--train", help="training corpus JSONL")
    _opt(sub, d, "--dev", help="dev corpus JSONL")
    _opt(sub, d, "--out", help="run directory")
    _opt(sub, d, "--scheme", default="none", choices=SCHEME_CHOICES)
    _opt(sub, d, "--unit", choices=UNIT_CHOICES)
    _opt(sub, d, "--num-buckets", default=10, type=int)
    _opt(sub, d, "--vocab-size", default=4096, type=int)
    _opt(sub, d, "--d-model", default=64, type=int)
    _opt(sub, d, "--encoder-layers", default=2, type=int)
    _opt(sub, d, "--decoder-layers", default=2, type=int)
    _opt(sub, d, "--heads", default=4, type=int)
    _opt(sub, d, "--ffn-width", default=256, type=int)
    _opt(sub, d, "--max-src-len", default=256, type=int)
    _opt(sub, d, "--max-tgt-len", default=128, type=int)
    _opt(sub, d, "--length-head", default=None,
         action=argparse.BooleanOptionalAction,
         help="force the length head on/off (default: on when lam > 0)")
    _opt(sub, d, "--length-head-width", default=64, type=int)
    _opt(sub, d, "--dropout", default=0.0, type=float)
    _opt(sub, d, "--epochs", default=10, type=int)
    _opt(sub, d, "--batch-size", default=32, type=int)
    _opt(sub, d, "--learning-rate", "--lr", default=3e-4, type=float)
    _opt(sub, d, "--lam", default=0.0, type=float,
         help="length-loss weight in the joint loss")
    _opt(sub, d, "--seed", default=0, type=int)
    _opt(sub, d, "--noise", default=True,
         action=argparse.BooleanOptionalAction,
         help="countdown position jitter during training")
    _opt(sub, d, "--patience", default=3, type=int)

    sub, d = new_command("generate", cmd_generate,
                         "decode documents to JSONL summaries")
    _opt(sub, d, "--ckpt", help="checkpoint path")
    _opt(sub, d, "--in", dest="in_path", help="input JSONL with documents")
    _opt(sub, d, "--out", help="output JSONL")
    _opt(sub, d, "--length", default=None, type=int,
         help="requested length in the scheme's unit")
    _opt(sub, d, "--predict-length", default=False,
         action=argparse.BooleanOptionalAction,
         help="let the model choose the length")
    _add_gen_flags(sub, d)

    sub, d = new_command("predict-length", cmd_predict_length,
                         "emit a predicted length per document")
    _opt(sub, d, "--ckpt", help="checkpoint path")
    _opt(sub, d, "--in", dest="in_path", help="input JSONL with documents")
    _opt(sub, d, "--out", default=None, help="optional JSONL output")

    sub, d = new_command("evaluate", cmd_evaluate,
                         "score a checkpoint on a test corpus")
    _opt(sub, d, "--ckpt", help="checkpoint path")
    _opt(sub, d, "--test", help="test corpus JSONL")
    _opt(sub, d, "--scheme", default=None, choices=SCHEME_CHOICES,
         help="assert the checkpoint's scheme")
    _opt(sub, d, "--unit", default=None, choices=UNIT_CHOICES,
         help="length unit override (scheme 'none' only)")
    _opt(sub, d, "--report", default=None, help="write report JSON here")
    _opt(sub, d, "--per-example", default=None,
         help="write per-example JSONL here")
    _opt(sub, d, "--curve", default=None,
         help="write per-length accuracy CSV here")
    _opt(sub, d, "--oracle", default=False,
         action=argparse.BooleanOptionalAction,
         help="score the references against themselves (harness check)")
    _add_gen_flags(sub, d)

    sub, d = new_command("sweep", cmd_sweep,
                         "request each length on every document")
    _opt(sub, d, "--ckpt", help="checkpoint path")
    _opt(sub, d, "--in", dest="in_path", help="input JSONL with documents")
    _opt(sub, d, "--lengths", default="1..8",
         help="lengths to request: 'A..B' or comma list")
    _opt(sub, d, "--out", default=None, help="write sweep CSV here")
    _add_gen_flags(sub, d)

    return parser, registry


def _run(argv) -> int:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    defaults, func = registry[args.command]
    resolved = _resolve(args, defaults)
    return func(resolved)


def main(argv=None) -> int:
    try:
        return _run(argv)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
