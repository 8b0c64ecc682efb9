"""Shared fixtures for the test suite.

The end-to-end acceptance tests all draw on the same small zoo of models
trained on one synthetic corpus.  Training even tiny models costs minutes,
so the zoo is built once per session (and can be cached across sessions by
pointing ``LENCTL_TEST_CACHE`` at a writable directory — handy while
iterating; leave it unset for a clean from-scratch run).

Every acceptance test reports one PASS/FAIL line; the lines are replayed
in a summary block at the end of the pytest run so the whole scorecard is
visible in one place.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from lenctl.control import ControlScheme, scheme_from_record, scheme_to_record
from lenctl.decoding import GenConfig
from lenctl.evaluation import (EvalReport, evaluate, fixed_length_sweep,
                               predict_lengths)
from lenctl.model import ModelConfig, load_model, round_length, save_model
from lenctl.synth import SynthSpec, generate_synthetic_corpus
from lenctl.text import build_vocab
from lenctl.training import TrainConfig, fit_scheme, train

# --------------------------------------------------------------------------
# The fixed experimental protocol behind the desk-scale comparisons.
#
# One corpus, one model size, one optimizer setting, and the same number of
# epochs for every control scheme, so that differences between schemes are
# attributable to the conditioning mechanism rather than the training budget.
# Eight epochs is the largest uniform budget that keeps each comparison's
# train-plus-evaluate cost under its half-hour ceiling on a desktop CPU.
# --------------------------------------------------------------------------

TRAIN_SIZE, DEV_SIZE, TEST_SIZE, SWEEP_SIZE = 5000, 200, 200, 50
TRAIN_SEED, DEV_SEED, TEST_SEED, SWEEP_SEED = 101, 102, 103, 104
VOCAB_MAX = 4096
EPOCHS = 8
BATCH_SIZE = 32
LEARNING_RATE = 1e-3
RUN_SEED = 0

# Joint-loss mixing weights: a small weight when generation is the end goal
# (the reversed-position model predicts its own target length at decode
# time), an equal weight when the length predictor itself is under study.
GEN_JOINT_LAM = 0.1
PRED_JOINT_LAM = 0.5

TOKEN_BUCKETS = 10
SENT_BUCKETS = 4

# name -> (scheme name, unit, lam, length_head, num_buckets)
ZOO_SPECS: dict[str, tuple[str, str, float, bool, int | None]] = {
    "none": ("none", "tokens", 0.0, False, None),
    "repilot": ("repilot", "tokens", GEN_JOINT_LAM, True, None),
    "buckets10": ("buckets", "tokens", 0.0, False, TOKEN_BUCKETS),
    "sentenum": ("sentenum", "sentences", 0.0, False, None),
    "sentprefix": ("sentprefix", "sentences", 0.0, False, None),
    "buckets4s": ("buckets", "sentences", 0.0, False, SENT_BUCKETS),
    "standalone": ("none", "tokens", 1.0, True, None),
}

# evaluation key -> (model name, measurement override or None for the
# model's own scheme).  The unconditioned model is scored twice: once in
# tokens and once in sentences (measurement unit only; no retraining).
EVAL_SPECS: dict[str, tuple[str, tuple[str, str] | None]] = {
    "none-tokens": ("none", None),
    "none-sents": ("none", ("none", "sentences")),
    "repilot": ("repilot", None),
    "buckets10": ("buckets10", None),
    "sentenum": ("sentenum", None),
    "sentprefix": ("sentprefix", None),
    "buckets4s": ("buckets4s", None),
}

SWEEP_MODELS = ("sentenum", "sentprefix")
SWEEP_LENGTHS = tuple(range(1, 9))
PREDICTOR_MODELS = ("repilot", "standalone")

_FINGERPRINT = json.dumps({
    "sizes": [TRAIN_SIZE, DEV_SIZE, TEST_SIZE, SWEEP_SIZE],
    "seeds": [TRAIN_SEED, DEV_SEED, TEST_SEED, SWEEP_SEED],
    "vocab": VOCAB_MAX, "epochs": EPOCHS, "batch": BATCH_SIZE,
    "lr": LEARNING_RATE, "run_seed": RUN_SEED,
    "lams": [GEN_JOINT_LAM, PRED_JOINT_LAM],
    "buckets": [TOKEN_BUCKETS, SENT_BUCKETS],
    "zoo": sorted(ZOO_SPECS), "evals": sorted(EVAL_SPECS),
}, sort_keys=True)


# --------------------------------------------------------------------------
# PASS/FAIL scorecard plumbing
# --------------------------------------------------------------------------

_SCORECARD: list[str] = []


def _check(ok: bool, label: str, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    _SCORECARD.append(line)
    print(line)
    assert ok, line


@pytest.fixture
def check():
    """Record one PASS/FAIL scorecard line and assert it."""
    return _check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _SCORECARD:
        terminalreporter.section("acceptance scorecard")
        for line in _SCORECARD:
            terminalreporter.write_line(line)


# --------------------------------------------------------------------------
# Corpora and the trained-model zoo
# --------------------------------------------------------------------------


@dataclass
class Corpora:
    train: list
    dev: list
    test: list
    sweep: list
    vocab: object


@dataclass
class ModelZoo:
    corpora: Corpora
    models: dict[str, tuple[object, ControlScheme]]
    reports: dict[str, EvalReport]
    sweeps: dict[str, dict[int, float]]
    predictor_diff: dict[str, float]
    times: dict[str, float]

    def time_of(self, *keys: str) -> float:
        return sum(self.times[k] for k in keys)


@pytest.fixture(scope="session")
def corpora() -> Corpora:
    train = generate_synthetic_corpus(SynthSpec(size=TRAIN_SIZE), seed=TRAIN_SEED)
    dev = generate_synthetic_corpus(SynthSpec(size=DEV_SIZE), seed=DEV_SEED)
    test = generate_synthetic_corpus(SynthSpec(size=TEST_SIZE), seed=TEST_SEED)
    sweep = generate_synthetic_corpus(SynthSpec(size=SWEEP_SIZE), seed=SWEEP_SEED)
    vocab = build_vocab([ex.document.text for ex in train]
                        + [ex.summary.text for ex in train], VOCAB_MAX)
    return Corpora(train=train, dev=dev, test=test, sweep=sweep, vocab=vocab)


def _scheme_for(name: str, corpora: Corpora) -> ControlScheme:
    scheme_name, unit, _, _, buckets = ZOO_SPECS[name]
    scheme = ControlScheme(scheme_name, unit=unit)
    if buckets is not None:
        scheme = fit_scheme(scheme, corpora.train, num_buckets=buckets)
    return scheme


def _train_one(name: str, corpora: Corpora, out_dir: Path):
    scheme_name, unit, lam, head, buckets = ZOO_SPECS[name]
    scheme = _scheme_for(name, corpora)
    model_config = ModelConfig(vocab_size=len(corpora.vocab), length_head=head)
    train_config = TrainConfig(epochs=EPOCHS, batch_size=BATCH_SIZE,
                               learning_rate=LEARNING_RATE, lam=lam,
                               scheme=scheme, patience=EPOCHS, seed=RUN_SEED)
    result = train(corpora.train, corpora.dev, corpora.vocab, model_config,
                   train_config, out_dir=out_dir)
    return result.params, result.scheme


def _predictor_diff(params, corpora: Corpora) -> float:
    docs = [ex.document.text for ex in corpora.dev]
    preds = predict_lengths(params, docs, corpora.vocab)
    golds = np.array([ex.gold_tokens for ex in corpora.dev], dtype=np.float64)
    rounded = np.array([round_length(p) for p in preds], dtype=np.float64)
    return float(np.mean(np.abs(rounded - golds)))


def _report_from_dict(d: dict) -> EvalReport:
    return EvalReport(
        scheme=d["scheme"], unit=d["unit"], n=d["n"],
        rouge1_f=d["rouge1_f"], rouge2_f=d["rouge2_f"], acc=d["acc"],
        diff=d["diff"], pct_over=d["pct_over"], pct_under=d["pct_under"],
        per_length={int(k): v for k, v in d["per_length"].items()},
        per_length_counts={int(k): v
                           for k, v in d["per_length_counts"].items()})


def _build_zoo(corpora: Corpora, root: Path) -> ModelZoo:
    times: dict[str, float] = {}
    models: dict[str, tuple[object, ControlScheme]] = {}
    for name in ZOO_SPECS:
        t0 = time.monotonic()
        params, scheme = _train_one(name, corpora, root / name)
        times[f"train/{name}"] = time.monotonic() - t0
        models[name] = (params, scheme)
        save_model(root / name / "zoo.ckpt", params, corpora.vocab,
                   scheme_to_record(scheme))

    gen = GenConfig(mode="greedy")
    reports: dict[str, EvalReport] = {}
    for key, (model_name, override) in EVAL_SPECS.items():
        params, scheme = models[model_name]
        if override is not None:
            scheme = ControlScheme(override[0], unit=override[1])
        t0 = time.monotonic()
        report, _ = evaluate(params, corpora.test, scheme, gen, corpora.vocab)
        times[f"eval/{key}"] = time.monotonic() - t0
        reports[key] = report

    sweeps: dict[str, dict[int, float]] = {}
    sweep_docs = [ex.document.text for ex in corpora.sweep]
    for name in SWEEP_MODELS:
        params, scheme = models[name]
        t0 = time.monotonic()
        rows = fixed_length_sweep(params, sweep_docs, scheme, gen,
                                  corpora.vocab, lengths=SWEEP_LENGTHS)
        times[f"sweep/{name}"] = time.monotonic() - t0
        sweeps[name] = {row.length: row.accuracy for row in rows}

    predictor_diff = {}
    for name in PREDICTOR_MODELS:
        t0 = time.monotonic()
        predictor_diff[name] = _predictor_diff(models[name][0], corpora)
        times[f"predict/{name}"] = time.monotonic() - t0

    manifest = {
        "fingerprint": _FINGERPRINT,
        "times": times,
        "reports": {k: r.to_dict() for k, r in reports.items()},
        "sweeps": {k: {str(l): a for l, a in c.items()}
                   for k, c in sweeps.items()},
        "predictor_diff": predictor_diff,
    }
    (root / "zoo_manifest.json").write_text(json.dumps(manifest, indent=1))
    return ModelZoo(corpora=corpora, models=models, reports=reports,
                    sweeps=sweeps, predictor_diff=predictor_diff, times=times)


def _load_zoo(corpora: Corpora, root: Path) -> ModelZoo | None:
    manifest_path = root / "zoo_manifest.json"
    if not manifest_path.exists():
        return None
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("fingerprint") != _FINGERPRINT:
        return None
    models = {}
    for name in ZOO_SPECS:
        ckpt = root / name / "zoo.ckpt"
        if not ckpt.exists():
            return None
        params, _, record = load_model(ckpt)
        models[name] = (params, scheme_from_record(record))
    return ModelZoo(
        corpora=corpora, models=models,
        reports={k: _report_from_dict(d)
                 for k, d in manifest["reports"].items()},
        sweeps={k: {int(l): a for l, a in c.items()}
                for k, c in manifest["sweeps"].items()},
        predictor_diff=manifest["predictor_diff"],
        times=manifest["times"])


@pytest.fixture(scope="session")
def model_zoo(corpora, tmp_path_factory) -> ModelZoo:
    cache = os.environ.get("LENCTL_TEST_CACHE")
    root = Path(cache) if cache else tmp_path_factory.mktemp("zoo")
    root.mkdir(parents=True, exist_ok=True)
    if cache:
        cached = _load_zoo(corpora, root)
        if cached is not None:
            return cached
    return _build_zoo(corpora, root)
