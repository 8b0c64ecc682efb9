"""Metrics and report emission.

Rouge-n works on clipped n-gram multiset overlap; length metrics cover
exact-match accuracy, mean absolute difference, the percentage generating
long/short, and a per-reference-length accuracy curve.  ``evaluate``
decodes a corpus with gold-conditioned lengths, strips control markup
before scoring, and measures lengths in the scheme's unit (tokens or
sentences); ``fixed_length_sweep`` requests every length in a range on
the same documents to trace a controllability curve.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControlScheme, gold_length
from .decoding import GenConfig, GenOutput, generate_many
from .errors import ConfigError
from .model import ModelParams, encode, predict_length
from .text import PAD_ID, ControlledExample, Vocabulary, tokenize, word_split


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def rouge_tokens(text: str) -> list[str]:
    """The token stream Rouge scores on: lowercased, punctuation split."""
    return word_split(text.lower())


def _ngram_counts(tokens: list, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: list, reference: list, n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1; empty sides score 0."""
    if n < 1:
        raise ValueError(f"rouge_n needs n >= 1, got {n}")
    cand = _ngram_counts(candidate, n)
    ref = _ngram_counts(reference, n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return RougeScore(precision=precision, recall=recall, f1=f1)


@dataclass
class LengthMetrics:
    """Aggregates over (generated, reference) length pairs."""

    acc: float
    diff: float
    pct_over: float
    pct_under: float
    per_length: dict[int, float]
    per_length_counts: dict[int, int]
    n: int
    n_exact: int
    n_over: int
    n_under: int


def length_metrics(pairs: list[tuple[int, int]]) -> LengthMetrics:
    """Accuracy, mean |gen - ref|, over/under percentages, per-length curve."""
    if not pairs:
        raise ValueError("length_metrics needs at least one pair")
    n = len(pairs)
    n_exact = sum(1 for g, r in pairs if g == r)
    n_over = sum(1 for g, r in pairs if g > r)
    n_under = n - n_exact - n_over
    diff = sum(abs(g - r) for g, r in pairs) / n
    by_ref: dict[int, list[int]] = {}
    for g, r in pairs:
        by_ref.setdefault(r, []).append(g)
    per_length = {r: sum(1 for g in gs if g == r) / len(gs)
                  for r, gs in sorted(by_ref.items())}
    per_length_counts = {r: len(gs) for r, gs in sorted(by_ref.items())}
    return LengthMetrics(acc=n_exact / n, diff=diff,
                         pct_over=100.0 * n_over / n,
                         pct_under=100.0 * n_under / n,
                         per_length=per_length,
                         per_length_counts=per_length_counts,
                         n=n, n_exact=n_exact, n_over=n_over, n_under=n_under)


@dataclass
class EvalReport:
    """Everything one corpus evaluation reports."""

    scheme: str
    unit: str
    n: int
    rouge1_f: float
    rouge2_f: float
    acc: float
    diff: float
    pct_over: float
    pct_under: float
    per_length: dict[int, float] = field(default_factory=dict)
    per_length_counts: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "unit": self.unit, "n": self.n,
                "rouge1_f": self.rouge1_f, "rouge2_f": self.rouge2_f,
                "acc": self.acc, "diff": self.diff,
                "pct_over": self.pct_over, "pct_under": self.pct_under,
                "per_length": {str(k): v for k, v in self.per_length.items()},
                "per_length_counts": {str(k): v for k, v
                                      in self.per_length_counts.items()}}


def _write_curve(path, metrics: LengthMetrics) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length", "accuracy", "count"])
        for length, acc in metrics.per_length.items():
            writer.writerow([length, repr(acc),
                             metrics.per_length_counts[length]])


def _unit_length(out: GenOutput, unit: str) -> int:
    return out.gen_sents if unit == "sentences" else out.gen_tokens


def evaluate(params: ModelParams | None, examples: list[ControlledExample],
             scheme: ControlScheme, gen: GenConfig, vocab: Vocabulary | None,
             *, out_jsonl=None, curve_csv=None,
             oracle: bool = False) -> tuple[EvalReport, list[GenOutput]]:
    """Decode every example (gold-conditioned when the scheme takes a
    length) and score Rouge plus length metrics in the scheme's unit.

    ``oracle`` replaces generation with the references themselves — a
    harness self-check whose report must come out perfect.
    """
    if not examples:
        raise ValueError("evaluate needs at least one example")
    golds = [gold_length(ex, scheme) for ex in examples]
    if oracle:
        outputs = [GenOutput(summary=ex.summary.text,
                             gen_tokens=ex.gold_tokens,
                             gen_sents=ex.gold_sents, claimed_len=g,
                             requested_len=g)
                   for ex, g in zip(examples, golds)]
    else:
        if params is None or vocab is None:
            raise ValueError("evaluate needs params and vocab unless "
                             "oracle=True")
        requested = None if scheme.name == "none" else list(golds)
        outputs = generate_many(params, [ex.document.text for ex in examples],
                                scheme, gen, vocab, requested)
    r1 = r2 = 0.0
    pairs: list[tuple[int, int]] = []
    for ex, out, gold in zip(examples, outputs, golds):
        cand = rouge_tokens(out.summary)
        ref = rouge_tokens(ex.summary.text)
        r1 += rouge_n(cand, ref, 1).f1
        r2 += rouge_n(cand, ref, 2).f1
        pairs.append((_unit_length(out, scheme.unit), gold))
    metrics = length_metrics(pairs)
    report = EvalReport(scheme=scheme.name, unit=scheme.unit, n=len(examples),
                        rouge1_f=r1 / len(examples), rouge2_f=r2 / len(examples),
                        acc=metrics.acc, diff=metrics.diff,
                        pct_over=metrics.pct_over, pct_under=metrics.pct_under,
                        per_length=metrics.per_length,
                        per_length_counts=metrics.per_length_counts)
    if out_jsonl is not None:
        with open(out_jsonl, "w", encoding="utf-8") as fh:
            for out, gold in zip(outputs, golds):
                row = out.to_dict()
                row["ref_len"] = gold
                fh.write(json.dumps(row) + "\n")
    if curve_csv is not None:
        _write_curve(curve_csv, metrics)
    return report, outputs


@dataclass
class SweepRow:
    length: int
    accuracy: float
    count: int


def fixed_length_sweep(params: ModelParams, documents: list[str],
                       scheme: ControlScheme, gen: GenConfig,
                       vocab: Vocabulary,
                       lengths: tuple[int, ...] = tuple(range(1, 9)),
                       csv_path=None) -> list[SweepRow]:
    """Request each length on every document; report how often the output
    hits it exactly (measured in the scheme's unit)."""
    if scheme.name == "none":
        raise ConfigError("the 'none' scheme cannot take a requested length")
    if not documents:
        raise ValueError("fixed_length_sweep needs documents")
    rows = []
    for length in lengths:
        outs = generate_many(params, documents, scheme, gen, vocab,
                             [length] * len(documents))
        hits = sum(1 for o in outs if _unit_length(o, scheme.unit) == length)
        rows.append(SweepRow(length=length, accuracy=hits / len(documents),
                             count=len(documents)))
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["length", "accuracy", "count"])
            for row in rows:
                writer.writerow([row.length, repr(row.accuracy), row.count])
    return rows


def predict_lengths(params: ModelParams, documents: list[str],
                    vocab: Vocabulary, batch_size: int = 64) -> np.ndarray:
    """Length-head predictions (real-valued token counts) per document."""
    preds = []
    cfg = params.config
    for start in range(0, len(documents), batch_size):
        chunk = documents[start:start + batch_size]
        rows = [tokenize(doc, vocab)[:cfg.max_src_len] for doc in chunk]
        width = max(len(r) for r in rows)
        src = np.full((len(rows), width), PAD_ID, dtype=np.int64)
        for i, row in enumerate(rows):
            src[i, :len(row)] = row
        enc = encode(params, src)
        preds.extend(predict_length(params, enc).tolist())
    return np.asarray(preds)
