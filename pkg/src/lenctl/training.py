"""Multi-task training: teacher-forced generation loss plus length loss.

One loop trains every control scheme; only batch preparation differs.
Textual schemes rewrite the target with their markup and use forward
positions; the countdown scheme keeps the raw target and builds reverse
position plans anchored at each example's gold token count, jittered by a
per-sequence integer noise draw.  The two losses combine as
``(1 - lam) * ce + lam * length_mse`` with length targets scaled by
``1 / max_tgt_len`` so the magnitudes are commensurate.

The loop writes a rolling ``last.ckpt`` every epoch and promotes it to
``best.ckpt`` whenever the dev selection loss improves; training stops
early after ``patience`` epochs without improvement.  Runs are bitwise
reproducible from (corpus, configs, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .control import (ControlScheme, annotate, compute_bucket_edges,
                      gold_length, scheme_to_record)
from .errors import ConfigError, NumericError
from .model import (EncoderOutput, ModelConfig, ModelParams, encode,
                    decoder_forward, init_params, length_head_forward,
                    predict_length, round_length, save_model)
from .optim import AdamState, adam_step
from .positions import (SCHEME_FORWARD, SCHEME_REVERSE, PositionPlan,
                        sample_noise_batch)
from .tensor import Tape, Tensor
from .text import (BOS_ID, EOS_ID, PAD_ID, ControlledExample, Vocabulary,
                   tokenize, word_split)


@dataclass
class TrainConfig:
    """Optimization knobs; the control scheme rides along because it decides
    batch preparation."""

    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.0
    seed: int = 0
    scheme: ControlScheme = field(default_factory=lambda: ControlScheme("none"))
    noise: bool = True
    patience: int = 3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"joint-loss weight lam must be in [0, 1], "
                             f"got {self.lam}")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, "
                             f"got {self.learning_rate}")


@dataclass
class Batch:
    """Everything one optimizer step needs."""

    src: np.ndarray            # [B, S] source ids, right-padded
    tgt_in: np.ndarray         # [B, T] decoder inputs (starts with BOS)
    tgt_out: np.ndarray        # [B, T] decoder targets (ends with EOS)
    plan: PositionPlan
    length_targets: np.ndarray  # [B] gold token counts (float)

    @property
    def size(self) -> int:
        return self.src.shape[0]


def _pad_rows(rows: list[list[int]], width: int) -> np.ndarray:
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
    return out


def prepare_batch(examples: list[ControlledExample], scheme: ControlScheme,
                  vocab: Vocabulary, rng: np.random.Generator, *,
                  model_config: ModelConfig, noise: bool = True) -> Batch:
    """Tokenize, annotate, pad and plan one batch.

    Countdown noise is drawn once per sequence from ``rng`` (when ``noise``
    and the scheme is ``repilot``), so identical rng state gives identical
    batches.
    """
    if not examples:
        raise ValueError("prepare_batch needs at least one example")
    if scheme.name == "buckets" and not scheme.bucket_edges:
        raise ConfigError("buckets scheme must have fitted edges before "
                          "batch preparation")
    src_rows: list[list[int]] = []
    tgt_rows: list[list[int]] = []
    for ex in examples:
        src_rows.append(
            tokenize(ex.document.text, vocab)[:model_config.max_src_len])
        if ex.control == "none":
            tgt_text = annotate(ex, scheme)
        elif ex.control == scheme.name:
            tgt_text = ex.summary.text   # already annotated by preprocessing
        else:
            raise ConfigError(f"example annotated for scheme "
                              f"{ex.control!r} cannot train a "
                              f"{scheme.name!r} model")
        tgt = tokenize(tgt_text, vocab)
        tgt = tgt[:model_config.max_tgt_len - 1] + [EOS_ID]
        tgt_rows.append(tgt)
    src = _pad_rows(src_rows, max(len(r) for r in src_rows))
    width = max(len(r) for r in tgt_rows)
    tgt_out = _pad_rows(tgt_rows, width)
    tgt_in = _pad_rows([[BOS_ID] + row[:-1] for row in tgt_rows], width)
    lengths = np.array([ex.gold_tokens for ex in examples], dtype=np.float64)
    if scheme.name == "repilot":
        offsets = (sample_noise_batch(rng, len(examples)) if noise
                   else np.zeros(len(examples), dtype=np.int64))
        plan = PositionPlan(SCHEME_REVERSE, model_config.dec_max_index,
                            target_len=lengths.astype(np.int64),
                            noise=offsets)
    else:
        plan = PositionPlan(SCHEME_FORWARD, model_config.dec_max_index)
    return Batch(src=src, tgt_in=tgt_in, tgt_out=tgt_out, plan=plan,
                 length_targets=lengths)


def joint_loss(ce: Tensor | None, length_loss: Tensor | None, lam: float,
               tape: Tape | None = None) -> Tensor:
    """``(1 - lam) * ce + lam * length_loss``; the endpoints pass through
    the surviving term untouched."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    if lam == 0.0:
        if ce is None:
            raise ValueError("lam=0 needs a generation loss")
        return ce
    if lam == 1.0:
        if length_loss is None:
            raise ValueError("lam=1 needs a length loss")
        return length_loss
    if ce is None or length_loss is None:
        raise ValueError("0 < lam < 1 needs both losses")
    return T.add(T.scale(ce, 1.0 - lam, tape), T.scale(length_loss, lam, tape),
                 tape)


def _batch_ce(params: ModelParams, enc: EncoderOutput, batch: Batch,
              tape: Tape | None, rng: np.random.Generator | None) -> tuple[Tensor, int]:
    """Mean cross-entropy over the batch's non-pad target slots, plus the
    slot count (for corpus-level weighting)."""
    logits = decoder_forward(params, enc, batch.tgt_in, batch.plan, tape, rng)
    b, t, v = logits.shape
    flat = T.reshape(logits, (b * t, v), tape)
    ce = T.cross_entropy(flat, batch.tgt_out.reshape(-1), PAD_ID, tape)
    return ce, int((batch.tgt_out != PAD_ID).sum())


def _batch_length_loss(params: ModelParams, enc: EncoderOutput, batch: Batch,
                       tape: Tape | None) -> Tensor:
    scale = 1.0 / params.config.max_tgt_len
    raw = length_head_forward(params, enc, tape)
    target = Tensor((batch.length_targets * scale)[:, None])
    return T.mse(raw, target, tape)


@dataclass
class EpochMetrics:
    epoch: int
    train_ce: float | None
    train_len_loss: float | None
    dev_ce: float | None
    dev_len_diff: float | None
    dev_selection: float


@dataclass
class TrainResult:
    params: ModelParams          # parameters after the last completed epoch
    scheme: ControlScheme        # with bucket edges fitted, if applicable
    metrics: list[EpochMetrics]
    best_epoch: int
    best_path: Path
    last_path: Path
    metrics_path: Path
    stopped_early: bool


METRICS_COLUMNS = ("epoch", "train_ce", "train_len_loss", "dev_ce",
                   "dev_len_diff")


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _write_metrics(path: Path, rows: list[EpochMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([row.epoch, _fmt(row.train_ce),
                             _fmt(row.train_len_loss), _fmt(row.dev_ce),
                             _fmt(row.dev_len_diff)])


def _dev_metrics(params: ModelParams, dev: list[ControlledExample],
                 scheme: ControlScheme, vocab: Vocabulary,
                 config: TrainConfig) -> tuple[float | None, float | None, float | None]:
    """Teacher-forced dev CE, dev length MSE, dev length Diff (rounded)."""
    model_config = params.config
    rng = np.random.default_rng(0)  # dev plans carry no noise; rng unused
    total_nll = 0.0
    total_slots = 0
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    want_ce = config.lam < 1.0
    want_len = config.lam > 0.0 and model_config.length_head
    # Sorting by source length only tightens batch padding; every metric
    # below is a per-example (or per-slot) sum, so order cannot change it.
    dev = sorted(dev, key=lambda ex: len(word_split(ex.document.text)))
    for start in range(0, len(dev), config.batch_size):
        chunk = dev[start:start + config.batch_size]
        batch = prepare_batch(chunk, scheme, vocab, rng,
                              model_config=model_config, noise=False)
        enc = encode(params, batch.src)
        if want_ce:
            ce, slots = _batch_ce(params, enc, batch, None, None)
            total_nll += float(ce.data) * slots
            total_slots += slots
        if want_len:
            preds = predict_length(params, enc)
            scale = 1.0 / model_config.max_tgt_len
            diff_scaled = preds * scale - batch.length_targets * scale
            sq_sum += float((diff_scaled ** 2).sum())
            rounded = np.array([round_length(p) for p in preds])
            abs_sum += float(np.abs(rounded - batch.length_targets).sum())
            count += batch.size
    dev_ce = total_nll / total_slots if want_ce and total_slots else None
    dev_mse = sq_sum / count if want_len and count else None
    dev_diff = abs_sum / count if want_len and count else None
    return dev_ce, dev_mse, dev_diff


def _length_grouped_batches(order: np.ndarray, src_keys: np.ndarray,
                            tgt_keys: np.ndarray, batch_size: int,
                            rng: np.random.Generator) -> list[np.ndarray]:
    """Cut a shuffled example order into batches of similar length.

    Within pools of eight batches the shuffled order is sorted by source
    (then target) token count, so rows in a batch pad to a nearby width
    instead of the corpus maximum; the batch order is then reshuffled so
    length does not correlate with position in the epoch.  Everything is
    driven by ``rng``, keeping runs reproducible.
    """
    pool = batch_size * 8
    pieces: list[np.ndarray] = []
    for start in range(0, len(order), pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.lexsort((tgt_keys[chunk], src_keys[chunk]))]
        for b in range(0, len(chunk), batch_size):
            pieces.append(chunk[b:b + batch_size])
    return [pieces[i] for i in rng.permutation(len(pieces))]


def _selection_loss(dev_ce: float | None, dev_mse: float | None,
                    lam: float) -> float:
    if lam == 0.0:
        return dev_ce
    if lam == 1.0:
        return dev_mse
    return (1.0 - lam) * dev_ce + lam * dev_mse


def train(train_examples: list[ControlledExample],
          dev_examples: list[ControlledExample],
          vocab: Vocabulary, model_config: ModelConfig,
          train_config: TrainConfig, out_dir) -> TrainResult:
    """Full training run; returns the result and leaves ``best.ckpt``,
    ``last.ckpt`` (each with a JSON sidecar) and ``metrics.csv`` in
    ``out_dir``."""
    if not train_examples or not dev_examples:
        raise ValueError("train and dev corpora must be non-empty")
    scheme = train_config.scheme
    if train_config.lam > 0.0 and not model_config.length_head:
        raise ConfigError("lam > 0 requires a model with length_head=True")
    if scheme.name == "repilot" and model_config.position_scheme != SCHEME_REVERSE:
        raise ConfigError("the repilot scheme requires "
                          "position_scheme='reverse'")
    if scheme.name != "repilot" and model_config.position_scheme != SCHEME_FORWARD:
        raise ConfigError(f"scheme {scheme.name!r} requires "
                          f"position_scheme='forward'")
    if scheme.name == "buckets" and not scheme.bucket_edges:
        raise ConfigError("buckets scheme reached train() without fitted "
                          "edges; call fit_scheme() first")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    metrics_path = out_dir / "metrics.csv"
    control_record = scheme_to_record(scheme)

    rng = np.random.default_rng(train_config.seed)
    params = init_params(model_config, seed=train_config.seed)
    adam = AdamState.for_params(params.tensors)
    drop_rng = rng if model_config.dropout > 0 else None

    rows: list[EpochMetrics] = []
    best_value = np.inf
    best_epoch = -1
    since_best = 0
    stopped_early = False

    src_keys = np.array([len(word_split(ex.document.text))
                         for ex in train_examples])
    tgt_keys = np.array([ex.gold_tokens for ex in train_examples])

    for epoch in range(train_config.epochs):
        order = rng.permutation(len(train_examples))
        batches = _length_grouped_batches(order, src_keys, tgt_keys,
                                          train_config.batch_size, rng)
        ce_sum = 0.0
        ce_slots = 0
        len_sum = 0.0
        len_batches = 0
        for batch_index, batch_ids in enumerate(batches):
            chunk = [train_examples[i] for i in batch_ids]
            tape = Tape()
            batch = prepare_batch(chunk, scheme, vocab, rng,
                                  model_config=model_config,
                                  noise=train_config.noise)
            enc = encode(params, batch.src, tape, drop_rng)
            ce = slots = None
            if train_config.lam < 1.0:
                ce, slots = _batch_ce(params, enc, batch, tape, drop_rng)
                ce_sum += float(ce.data) * slots
                ce_slots += slots
            length_loss = None
            if train_config.lam > 0.0:
                length_loss = _batch_length_loss(params, enc, batch, tape)
                len_sum += float(length_loss.data)
                len_batches += 1
            loss = joint_loss(ce, length_loss, train_config.lam, tape)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite training loss at epoch "
                                   f"{epoch}, batch {batch_index}")
            params.zero_grads()
            tape.backward(loss)
            adam_step(params.tensors, params.grads(), adam,
                      train_config.learning_rate, train_config.beta1,
                      train_config.beta2, train_config.adam_eps)

        dev_ce, dev_mse, dev_diff = _dev_metrics(params, dev_examples, scheme,
                                                 vocab, train_config)
        selection = _selection_loss(dev_ce, dev_mse, train_config.lam)
        rows.append(EpochMetrics(
            epoch=epoch,
            train_ce=(ce_sum / ce_slots) if ce_slots else None,
            train_len_loss=(len_sum / len_batches) if len_batches else None,
            dev_ce=dev_ce,
            dev_len_diff=dev_diff,
            dev_selection=selection,
        ))
        save_model(last_path, params, vocab, control_record)
        _write_metrics(metrics_path, rows)
        if selection < best_value:
            best_value = selection
            best_epoch = epoch
            since_best = 0
            save_model(best_path, params, vocab, control_record)
        else:
            since_best += 1
            if since_best >= train_config.patience:
                stopped_early = True
                break

    return TrainResult(params=params, scheme=scheme, metrics=rows,
                       best_epoch=best_epoch, best_path=best_path,
                       last_path=last_path, metrics_path=metrics_path,
                       stopped_early=stopped_early)


def fit_scheme(scheme: ControlScheme, examples: list[ControlledExample],
               num_buckets: int = 10) -> ControlScheme:
    """Fill in whatever corpus-fitted state a scheme needs (bucket edges)."""
    if scheme.name != "buckets":
        return scheme
    if scheme.bucket_edges:
        return scheme
    lengths = [gold_length(ex, scheme) for ex in examples]
    return scheme.with_edges(compute_bucket_edges(lengths, num_buckets))
