"""Generation under each control scheme.

The requested length enters generation three different ways:

* countdown positions (``repilot``): a reverse position plan anchored at
  the requested token count, zero noise;
* forced prefixes (``sentenum``/``sentprefix``/``buckets``): the control
  tokens (``[SN]<n> [SEP]`` or ``[BKT<i>]``) are teacher-forced into the
  decoder before free decoding starts;
* nothing (``none``): the model free-runs.

When the length source is ``predicted`` instead of ``user``, countdown
models take the rounded length-head output and prefix models generate
their own control tokens.  Decoding is greedy (batched) or beam search
with an optional length penalty ``((5+len)/6)**alpha`` and repeated
n-gram blocking.  Generated text is stripped of control markup before
token/sentence counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import ControlScheme, bucket_index, strip_control
from .errors import ConfigError
from .model import (EncoderOutput, ModelParams, decode_step, decoder_forward,
                    encode, predict_length, round_length)
from .positions import SCHEME_FORWARD, SCHEME_REVERSE, PositionPlan
from .tensor import Tensor
from .text import (BOS_ID, EOS_ID, PAD_ID, SEP_TOKEN, SN_TOKEN, Vocabulary,
                   bucket_token, detokenize, split_sentences, tokenize,
                   word_split)

MODES = ("greedy", "beam")
LENGTH_SOURCES = ("user", "predicted")


@dataclass(frozen=True)
class GenConfig:
    """Decoding knobs."""

    mode: str = "greedy"
    beam_width: int = 3
    length_penalty: float = 0.0
    ngram_block: int | None = None
    max_steps: int = 0          # 0 means "use the model's max target length"
    length_source: str = "user"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown decode mode {self.mode!r}; "
                             f"expected one of {MODES}")
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.ngram_block is not None and self.ngram_block < 1:
            raise ValueError(f"ngram_block must be >= 1 or None, "
                             f"got {self.ngram_block}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.length_source not in LENGTH_SOURCES:
            raise ValueError(f"unknown length source {self.length_source!r}; "
                             f"expected one of {LENGTH_SOURCES}")


@dataclass
class GenOutput:
    """One decoded document, post-processed."""

    summary: str                # control markup stripped
    gen_tokens: int
    gen_sents: int
    claimed_len: int | None     # length (or bucket index) the model wrote
    requested_len: int | None

    def to_dict(self) -> dict:
        return {"summary": self.summary, "gen_tokens": self.gen_tokens,
                "gen_sents": self.gen_sents, "claimed_len": self.claimed_len,
                "requested_len": self.requested_len}


def ngram_block(prefix_ids, n: int) -> set[int]:
    """Token ids that would complete an n-gram already in ``prefix_ids``."""
    if n < 1:
        raise ValueError(f"ngram_block needs n >= 1, got {n}")
    prefix = list(prefix_ids)
    if len(prefix) < n - 1:
        return set()
    seen: set[tuple[int, ...]] = set()
    for i in range(len(prefix) - n + 1):
        seen.add(tuple(prefix[i:i + n]))
    if not seen:
        return set()
    stem = tuple(prefix[len(prefix) - (n - 1):]) if n > 1 else ()
    return {gram[-1] for gram in seen if gram[:-1] == stem}


def _resolve_max_steps(gen: GenConfig, params: ModelParams) -> int:
    limit = params.config.max_tgt_len
    if gen.max_steps == 0:
        return limit
    if gen.max_steps > limit:
        raise ValueError(f"max_steps {gen.max_steps} exceeds the model's "
                         f"max target length {limit}")
    return gen.max_steps


def _forced_prefix(scheme: ControlScheme, requested: int | None,
                   vocab: Vocabulary) -> list[int]:
    """Control tokens teacher-forced before free decoding (may be empty)."""
    if requested is None or scheme.name in ("none", "repilot"):
        return []
    if scheme.name in ("sentenum", "sentprefix"):
        return tokenize(f"{SN_TOKEN}{requested} {SEP_TOKEN}", vocab)
    if scheme.name == "buckets":
        return tokenize(bucket_token(bucket_index(requested, scheme)), vocab)
    raise ConfigError(f"unknown control scheme {scheme.name!r}")


def _build_plan(scheme: ControlScheme, params: ModelParams,
                requested) -> PositionPlan:
    cfg = params.config
    if scheme.name == "repilot":
        return PositionPlan(SCHEME_REVERSE, cfg.dec_max_index,
                            target_len=requested, noise=0)
    return PositionPlan(SCHEME_FORWARD, cfg.dec_max_index)


def _finish(ids: list[int], scheme: ControlScheme, requested: int | None,
            vocab: Vocabulary) -> GenOutput:
    """Detokenize, strip control markup, count tokens and sentences."""
    text = detokenize(ids, vocab)
    body, claimed = strip_control(text, scheme)
    return GenOutput(summary=body,
                     gen_tokens=len(word_split(body)),
                     gen_sents=len(split_sentences(body)),
                     claimed_len=claimed,
                     requested_len=requested)


def _greedy_batch(params: ModelParams, encs: EncoderOutput,
                  forced: list[list[int]], plan: PositionPlan,
                  gen: GenConfig, max_steps: int) -> list[list[int]]:
    """Greedy decode a batch in lockstep; returns generated ids per row
    (forced prefix included, EOS excluded)."""
    b = encs.states.data.shape[0]
    if len({len(f) for f in forced}) > 1:
        raise ValueError("greedy batches need equal forced-prefix lengths; "
                         "group documents first")
    rows = [[BOS_ID] + f for f in forced]
    done = np.zeros(b, dtype=bool)
    total = len(forced[0]) if forced else 0
    while total < max_steps and not done.all():
        ids = np.array(rows, dtype=np.int64)
        logits = decoder_forward(params, encs, ids, plan).data[:, -1, :]
        logits[:, PAD_ID] = -np.inf
        logits[:, BOS_ID] = -np.inf
        if gen.ngram_block is not None:
            for r in range(b):
                for tok in ngram_block(rows[r][1:], gen.ngram_block):
                    logits[r, tok] = -np.inf
        nxt = np.argmax(logits, axis=1)
        for r in range(b):
            if done[r]:
                rows[r].append(PAD_ID)
            elif nxt[r] == EOS_ID:
                done[r] = True
                rows[r].append(PAD_ID)
            else:
                rows[r].append(int(nxt[r]))
        total += 1
    out = []
    for row in rows:
        content = [t for t in row[1:] if t != PAD_ID]
        out.append(content)
    return out


@dataclass
class _Hypothesis:
    ids: tuple[int, ...]        # generated ids after BOS
    logprob: float
    finished: bool

    def score(self, alpha: float) -> float:
        if alpha == 0.0:
            return self.logprob
        return self.logprob / (((5.0 + len(self.ids)) / 6.0) ** alpha)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    return logits - (m + np.log(np.exp(logits - m).sum()))


def beam_search(params: ModelParams, enc: EncoderOutput,
                forced: list[int], plan: PositionPlan, gen: GenConfig,
                max_steps: int) -> list[int]:
    """Best hypothesis ids (forced prefix included, EOS excluded).

    Hypotheses are ranked by ``logprob / ((5+len)/6)**alpha``; ties break
    toward smaller token ids, which also makes width 1 reproduce greedy
    decoding exactly.
    """
    width = gen.beam_width
    alive = [_Hypothesis(ids=tuple(forced), logprob=0.0, finished=False)]
    finished: list[_Hypothesis] = []
    for _ in range(max_steps - len(forced)):
        if not alive:
            break
        candidates: list[_Hypothesis] = []
        for hyp in alive:
            logits = decode_step(params, enc, [BOS_ID, *hyp.ids], plan)
            logits = logits.copy()
            logits[PAD_ID] = -np.inf
            logits[BOS_ID] = -np.inf
            if gen.ngram_block is not None:
                for tok in ngram_block(list(hyp.ids), gen.ngram_block):
                    logits[tok] = -np.inf
            logp = _log_softmax(logits)
            keep = np.argsort(-logp, kind="stable")[:width]
            for tok in keep:
                tok = int(tok)
                if not np.isfinite(logp[tok]):
                    continue
                nxt = _Hypothesis(ids=hyp.ids + (tok,),
                                  logprob=hyp.logprob + float(logp[tok]),
                                  finished=(tok == EOS_ID))
                candidates.append(nxt)
        candidates.sort(key=lambda h: (-h.score(gen.length_penalty), h.ids))
        alive = []
        for hyp in candidates[:width]:
            if hyp.finished:
                finished.append(hyp)
            else:
                alive.append(hyp)
    pool = finished if finished else alive
    if not pool:
        return list(forced)
    best = min(pool, key=lambda h: (-h.score(gen.length_penalty), h.ids))
    ids = list(best.ids)
    if ids and ids[-1] == EOS_ID:
        ids.pop()
    return ids


def generate_many(params: ModelParams, documents: list[str],
                  scheme: ControlScheme, gen: GenConfig, vocab: Vocabulary,
                  requested_lengths: list[int | None] | None = None
                  ) -> list[GenOutput]:
    """Decode a document list; greedy runs batched, beam runs per document.

    ``requested_lengths`` supplies one length per document (in the
    scheme's unit) when the length source is ``user``.
    """
    if requested_lengths is None:
        requested_lengths = [None] * len(documents)
    if len(requested_lengths) != len(documents):
        raise ValueError(f"{len(documents)} documents but "
                         f"{len(requested_lengths)} requested lengths")
    if not documents:
        return []
    max_steps = _resolve_max_steps(gen, params)
    cfg = params.config
    src_rows = [tokenize(doc, vocab)[:cfg.max_src_len] for doc in documents]
    width = max(len(r) for r in src_rows)
    src = np.full((len(documents), width), PAD_ID, dtype=np.int64)
    for i, row in enumerate(src_rows):
        src[i, :len(row)] = row
    encs = encode(params, src)

    resolved: list[int | None]
    if gen.length_source == "predicted":
        if scheme.name == "repilot":
            preds = predict_length(params, encs)
            resolved = [round_length(p) for p in preds]
        else:
            # prefix schemes predict by free-running their own control tokens
            resolved = [None] * len(documents)
    else:
        resolved = []
        for req in requested_lengths:
            if req is None and scheme.name != "none":
                raise ValueError(f"scheme {scheme.name!r} with length "
                                 f"source 'user' needs a requested length")
            resolved.append(req)
    forced = [_forced_prefix(scheme, req, vocab) for req in resolved]

    if gen.mode == "beam":
        outputs = []
        for i, doc in enumerate(documents):
            enc_i = _slice_encoding(encs, i)
            plan = _build_plan(scheme, params, resolved[i])
            ids = beam_search(params, enc_i, forced[i], plan, gen, max_steps)
            outputs.append(_finish(ids, scheme, resolved[i], vocab))
        return outputs

    # greedy: group rows by forced-prefix length so batches stay rectangular
    groups: dict[int, list[int]] = {}
    for i, f in enumerate(forced):
        groups.setdefault(len(f), []).append(i)
    outputs: list[GenOutput | None] = [None] * len(documents)
    for indices in groups.values():
        sub_enc = _gather_encoding(encs, indices)
        if scheme.name == "repilot":
            targets = np.array([resolved[i] for i in indices], dtype=np.int64)
            plan = PositionPlan(SCHEME_REVERSE, cfg.dec_max_index,
                                target_len=targets, noise=0)
        else:
            plan = PositionPlan(SCHEME_FORWARD, cfg.dec_max_index)
        rows = _greedy_batch(params, sub_enc, [forced[i] for i in indices],
                             plan, gen, max_steps)
        for slot, ids in zip(indices, rows):
            outputs[slot] = _finish(ids, scheme, resolved[slot], vocab)
    return outputs


def generate(params: ModelParams, document: str, scheme: ControlScheme,
             gen: GenConfig, vocab: Vocabulary,
             requested_length: int | None = None) -> GenOutput:
    """Decode one document; see `generate_many`."""
    return generate_many(params, [document], scheme, gen, vocab,
                         [requested_length])[0]


def _slice_encoding(encs: EncoderOutput, i: int) -> EncoderOutput:
    return _gather_encoding(encs, [i])


def _gather_encoding(encs: EncoderOutput, indices: list[int]) -> EncoderOutput:
    return EncoderOutput(states=Tensor(encs.states.data[indices]),
                         mask=encs.mask[indices],
                         truncated=encs.truncated)
