"""Desk-scale encoder-decoder transformer with pluggable decoder positions.

The model computes next-token logits for a target sequence given a source
sequence; the decoder's position-embedding rows come from a
:class:`~lenctl.positions.PositionPlan`, so the same parameters serve both
ascending positions and remaining-token countdown positions.  An optional
regression head predicts the target token count from mean-pooled encoder
states.

Layers are pre-norm: ``x + Attn(LN(x))`` and ``x + FFN(LN(x))``, with a
final LayerNorm on each stack.  All math is float64 on the autodiff tape,
so eval-mode forward passes are bitwise deterministic.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_tensors, save_tensors
from .errors import ConfigError, DataError
from .positions import (PLAN_SCHEMES, SCHEME_FORWARD, PositionPlan,
                        position_indices)
from .tensor import Tape, Tensor
from .text import PAD_ID, Vocabulary

_MASKED = -1e9  # additive score for disallowed attention edges


@dataclass
class ModelConfig:
    """Architecture and size knobs; everything needed to rebuild the model."""

    vocab_size: int
    d_model: int = 64
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    num_heads: int = 4
    ffn_width: int = 256
    max_src_len: int = 256
    max_tgt_len: int = 128
    position_scheme: str = SCHEME_FORWARD
    length_head: bool = False
    length_head_width: int = 64
    dropout: float = 0.0

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(f"d_model {self.d_model} is not divisible by "
                              f"num_heads {self.num_heads}")
        if self.position_scheme not in PLAN_SCHEMES:
            raise ConfigError(f"unknown position_scheme "
                              f"{self.position_scheme!r}; expected one of "
                              f"{PLAN_SCHEMES}")
        if min(self.max_src_len, self.max_tgt_len) < 1:
            raise ConfigError("max_src_len and max_tgt_len must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("d_model", "num_encoder_layers", "num_decoder_layers",
                     "num_heads", "ffn_width", "length_head_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def dec_max_index(self) -> int:
        """Last valid decoder position row; headroom for positive countdown
        offsets and for decoding a few steps past the requested length."""
        return self.max_tgt_len + 8

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class ModelParams:
    """Config plus every learnable tensor, in fixed insertion order."""

    config: ModelConfig
    tensors: dict[str, Tensor]

    def t(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise KeyError(f"model has no tensor named {name!r}") from None

    def zero_grads(self) -> None:
        for tensor in self.tensors.values():
            tensor.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.tensors.items()
                if t.grad is not None}


@dataclass
class EncoderOutput:
    """Encoder states plus the mask needed by every downstream consumer."""

    states: Tensor            # [B, S, d]
    mask: np.ndarray          # [B, S] bool, True at real (non-pad) tokens
    truncated: bool = False   # source exceeded max_src_len and was cut


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Fresh parameters; the same seed always gives the same tensors."""
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.ffn_width
    tensors: dict[str, Tensor] = {}

    def put(name: str, value: np.ndarray) -> None:
        tensors[name] = Tensor(value, name=name)

    def put_norm(prefix: str) -> None:
        put(f"{prefix}.g", np.ones(d))
        put(f"{prefix}.b", np.zeros(d))

    def put_attn(prefix: str) -> None:
        for w in ("wq", "wk", "wv", "wo"):
            put(f"{prefix}.{w}", _xavier(rng, d, d))

    def put_ffn(prefix: str) -> None:
        put(f"{prefix}.w1", _xavier(rng, d, f))
        put(f"{prefix}.b1", np.zeros(f))
        put(f"{prefix}.w2", _xavier(rng, f, d))
        put(f"{prefix}.b2", np.zeros(d))

    put("tok_emb", rng.normal(0.0, 0.02, size=(config.vocab_size, d)))
    put("enc_pos", rng.normal(0.0, 0.02, size=(config.max_src_len, d)))
    put("dec_pos", rng.normal(0.0, 0.02, size=(config.dec_max_index + 1, d)))
    for i in range(config.num_encoder_layers):
        put_norm(f"enc{i}.ln1")
        put_attn(f"enc{i}.attn")
        put_norm(f"enc{i}.ln2")
        put_ffn(f"enc{i}.ffn")
    put_norm("enc_ln")
    for i in range(config.num_decoder_layers):
        put_norm(f"dec{i}.ln1")
        put_attn(f"dec{i}.self")
        put_norm(f"dec{i}.ln2")
        put_attn(f"dec{i}.cross")
        put_norm(f"dec{i}.ln3")
        put_ffn(f"dec{i}.ffn")
    put_norm("dec_ln")
    put("out_proj", _xavier(rng, d, config.vocab_size))
    put("out_bias", np.zeros(config.vocab_size))
    if config.length_head:
        h = config.length_head_width
        put("len.w1", _xavier(rng, d, h))
        put("len.b1", np.zeros(h))
        put("len.w2", _xavier(rng, h, 1))
        put("len.b2", np.zeros(1))
    return ModelParams(config=config, tensors=tensors)


def _multi_head(params: ModelParams, name: str, q_in: Tensor, kv_in: Tensor,
                mask: Tensor, tape: Tape | None) -> Tensor:
    """Scaled dot-product attention with the config's head count.

    ``mask`` is additive, broadcast against scores ``[B, H, Tq, Tk]``.
    """
    cfg = params.config
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    h, dh = cfg.num_heads, cfg.head_dim

    def split(x: Tensor, t_len: int) -> Tensor:
        x = T.reshape(x, (b, t_len, h, dh), tape)
        return T.transpose(x, (0, 2, 1, 3), tape)

    q = split(T.matmul(q_in, params.t(f"{name}.wq"), tape), tq)
    k = split(T.matmul(kv_in, params.t(f"{name}.wk"), tape), tk)
    v = split(T.matmul(kv_in, params.t(f"{name}.wv"), tape), tk)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2), tape), tape)
    scores = T.scale(scores, 1.0 / math.sqrt(dh), tape)
    scores = T.add(scores, mask, tape)
    weights = T.softmax_rows(scores, tape)
    ctx = T.matmul(weights, v, tape)
    ctx = T.transpose(ctx, (0, 2, 1, 3), tape)
    ctx = T.reshape(ctx, (b, tq, d), tape)
    return T.matmul(ctx, params.t(f"{name}.wo"), tape)


def _ffn(params: ModelParams, name: str, x: Tensor, tape: Tape | None) -> Tensor:
    hidden = T.add(T.matmul(x, params.t(f"{name}.w1"), tape),
                   params.t(f"{name}.b1"), tape)
    hidden = T.gelu(hidden, tape)
    return T.add(T.matmul(hidden, params.t(f"{name}.w2"), tape),
                 params.t(f"{name}.b2"), tape)


def _norm(params: ModelParams, name: str, x: Tensor, tape: Tape | None) -> Tensor:
    return T.layer_norm(x, params.t(f"{name}.g"), params.t(f"{name}.b"),
                        tape=tape)


def _maybe_drop(x: Tensor, params: ModelParams, tape: Tape | None,
                rng: np.random.Generator | None) -> Tensor:
    if rng is None or params.config.dropout == 0.0:
        return x
    return T.dropout(x, params.config.dropout, rng, tape)


def _key_pad_mask(mask: np.ndarray) -> Tensor:
    """Additive [B, 1, 1, S] mask hiding pad keys from every query."""
    add = np.where(mask, 0.0, _MASKED)
    return Tensor(add[:, None, None, :])


def encode(params: ModelParams, src_ids: np.ndarray,
           tape: Tape | None = None,
           rng: np.random.Generator | None = None) -> EncoderOutput:
    """Run the encoder stack over padded source ids ``[B, S]`` (or ``[S]``).

    Sources longer than ``max_src_len`` are truncated and flagged in the
    output.  Pad positions are hidden from attention, so a sequence's
    non-pad states do not depend on how much padding the batch carries.
    """
    cfg = params.config
    ids = np.asarray(src_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ValueError(f"encode expects [B, S] token ids, got shape {ids.shape}")
    truncated = ids.shape[1] > cfg.max_src_len
    if truncated:
        ids = ids[:, :cfg.max_src_len]
    b, s = ids.shape
    mask = ids != PAD_ID
    pos = np.minimum(np.arange(s, dtype=np.int64), cfg.max_src_len - 1)
    x = T.add(T.embedding(params.t("tok_emb"), ids, tape),
              T.embedding(params.t("enc_pos"), pos, tape), tape)
    x = _maybe_drop(x, params, tape, rng)
    attn_mask = _key_pad_mask(mask)
    for i in range(cfg.num_encoder_layers):
        normed = _norm(params, f"enc{i}.ln1", x, tape)
        branch = _multi_head(params, f"enc{i}.attn", normed, normed,
                             attn_mask, tape)
        x = T.add(x, _maybe_drop(branch, params, tape, rng), tape)
        normed = _norm(params, f"enc{i}.ln2", x, tape)
        branch = _ffn(params, f"enc{i}.ffn", normed, tape)
        x = T.add(x, _maybe_drop(branch, params, tape, rng), tape)
    x = _norm(params, "enc_ln", x, tape)
    return EncoderOutput(states=x, mask=mask, truncated=truncated)


def _check_plan(cfg: ModelConfig, plan: PositionPlan) -> None:
    if plan.scheme != cfg.position_scheme:
        raise ConfigError(f"position plan scheme {plan.scheme!r} does not "
                          f"match model position_scheme "
                          f"{cfg.position_scheme!r}")
    if plan.max_index > cfg.dec_max_index:
        raise ConfigError(f"plan max_index {plan.max_index} exceeds the "
                          f"decoder position table bound {cfg.dec_max_index}")


def decoder_forward(params: ModelParams, enc: EncoderOutput,
                    tgt_in_ids: np.ndarray, plan: PositionPlan,
                    tape: Tape | None = None,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Teacher-forced decoder pass: logits ``[B, T, V]`` for inputs ``[B, T]``.

    ``tgt_in_ids`` are decoder *inputs* (begin-of-sequence plus the shifted
    target).  Self-attention is causal and skips pad keys; cross-attention
    skips pad source keys.
    """
    cfg = params.config
    _check_plan(cfg, plan)
    ids = np.asarray(tgt_in_ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError(f"decoder_forward expects [B, T] ids, got {ids.shape}")
    b, t = ids.shape
    if t > cfg.dec_max_index + 1:
        raise ValueError(f"decoder input length {t} exceeds the position "
                         f"table ({cfg.dec_max_index + 1} rows)")
    pos = position_indices(plan, t)
    x = T.add(T.embedding(params.t("tok_emb"), ids, tape),
              T.embedding(params.t("dec_pos"), pos, tape), tape)
    x = _maybe_drop(x, params, tape, rng)
    causal = np.where(np.tril(np.ones((t, t), dtype=bool)), 0.0, _MASKED)
    tgt_pad = np.where(ids != PAD_ID, 0.0, _MASKED)
    self_mask = Tensor(causal[None, None, :, :] + tgt_pad[:, None, None, :])
    cross_mask = _key_pad_mask(enc.mask)
    for i in range(cfg.num_decoder_layers):
        normed = _norm(params, f"dec{i}.ln1", x, tape)
        branch = _multi_head(params, f"dec{i}.self", normed, normed,
                             self_mask, tape)
        x = T.add(x, _maybe_drop(branch, params, tape, rng), tape)
        normed = _norm(params, f"dec{i}.ln2", x, tape)
        branch = _multi_head(params, f"dec{i}.cross", normed, enc.states,
                             cross_mask, tape)
        x = T.add(x, _maybe_drop(branch, params, tape, rng), tape)
        normed = _norm(params, f"dec{i}.ln3", x, tape)
        branch = _ffn(params, f"dec{i}.ffn", normed, tape)
        x = T.add(x, _maybe_drop(branch, params, tape, rng), tape)
    x = _norm(params, "dec_ln", x, tape)
    return T.add(T.matmul(x, params.t("out_proj"), tape),
                 params.t("out_bias"), tape)


def decode_step(params: ModelParams, enc: EncoderOutput,
                prefix_ids, plan: PositionPlan) -> np.ndarray:
    """Next-token logits ``[V]`` after the given decoder input prefix.

    ``prefix_ids`` must start with the begin-of-sequence id; step t of
    generation corresponds to a prefix of length t+1, whose last slot's
    position row is ``position_indices(plan, t+1)[t]``.
    """
    prefix = np.asarray(prefix_ids, dtype=np.int64)
    if prefix.ndim != 1 or prefix.size == 0:
        raise ValueError("prefix_ids must be a non-empty 1-D id sequence")
    if enc.states.data.shape[0] != 1:
        raise ValueError("decode_step works on a single-sequence encoding; "
                         "use decoder_forward for batches")
    logits = decoder_forward(params, enc, prefix[None, :], plan)
    return logits.data[0, -1, :]


def length_head_forward(params: ModelParams, enc: EncoderOutput,
                        tape: Tape | None = None) -> Tensor:
    """Raw head output ``[B, 1]``: the predicted length divided by
    ``max_tgt_len`` (training targets use the same scaling)."""
    if not params.config.length_head:
        raise ConfigError("this model was built without a length head")
    counts = enc.mask.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("cannot pool a sequence with no non-pad tokens")
    weights = (enc.mask / counts)[:, None, :]          # [B, 1, S]
    pooled = T.matmul(Tensor(weights), enc.states, tape)
    pooled = T.reshape(pooled, (enc.mask.shape[0], params.config.d_model), tape)
    hidden = T.add(T.matmul(pooled, params.t("len.w1"), tape),
                   params.t("len.b1"), tape)
    hidden = T.gelu(hidden, tape)
    return T.add(T.matmul(hidden, params.t("len.w2"), tape),
                 params.t("len.b2"), tape)


def predict_length(params: ModelParams, enc: EncoderOutput) -> np.ndarray:
    """Predicted target token counts, one real value per batch row."""
    raw = length_head_forward(params, enc)
    return raw.data[:, 0] * params.config.max_tgt_len


def round_length(value: float) -> int:
    """How consumers turn a real-valued prediction into a usable length:
    round half up, never below 1."""
    return max(1, int(math.floor(float(value) + 0.5)))


def save_model(path, params: ModelParams, vocab: Vocabulary,
               control: dict | None = None) -> None:
    """Write the checkpoint plus a ``<path>.json`` sidecar.

    The sidecar carries the model config, the vocabulary, and (optionally)
    the control-scheme record produced by training, so generation can be
    reconstructed from the two files alone.
    """
    path = Path(path)
    save_tensors(path, params.tensors)
    sidecar = {"config": params.config.to_dict(),
               "vocab": list(vocab.id_to_token)}
    if control is not None:
        sidecar["control"] = control
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1)
        fh.write("\n")


def load_model(path) -> tuple[ModelParams, Vocabulary, dict | None]:
    """Rebuild ``(params, vocab, control-record)`` written by `save_model`."""
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise DataError(f"missing model sidecar {sidecar_path}")
    try:
        with open(sidecar_path, encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt model sidecar {sidecar_path}: {exc}") from exc
    for key in ("config", "vocab"):
        if key not in sidecar:
            raise DataError(f"model sidecar {sidecar_path} lacks {key!r}")
    config = ModelConfig.from_dict(sidecar["config"])
    vocab = Vocabulary.from_tokens(sidecar["vocab"])
    arrays = load_tensors(path)
    tensors = {name: Tensor(value, name=name) for name, value in arrays.items()}
    params = ModelParams(config=config, tensors=tensors)
    expected = set(init_params(config, seed=0).tensors)
    actual = set(tensors)
    if expected != actual:
        missing = sorted(expected - actual)
        surplus = sorted(actual - expected)
        raise DataError(f"checkpoint tensors do not match the config: "
                        f"missing {missing}, unexpected {surplus}")
    return params, vocab, sidecar.get("control")
