"""Length-control annotation schemes applied to summary text.

Four textual/positional schemes share one interface:

* ``none``       -- no control signal; the model free-runs.
* ``repilot``    -- no text change; control lives in decoder position indices.
* ``sentprefix`` -- prepend ``[SN]<n> [SEP]`` announcing the sentence count.
* ``sentenum``   -- sentprefix plus an inline ``[SN]<k>`` before sentence k.
* ``buckets``    -- prepend a ``[BKT<i>]`` token naming a fixed-width length
  bucket; bucket edges are fit on training lengths.

``annotate`` adds the scheme's markup, ``strip_control`` removes it and
reports the claimed length (or bucket index) so generated text can be scored
on its content alone.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import ConfigError
from .text import (SEP_TOKEN, SN_TOKEN, NUM_BUCKET_TOKENS, ControlledExample,
                   _nearest_rank, bucket_token, split_sentences)

SCHEME_NAMES = ("none", "repilot", "sentenum", "sentprefix", "buckets")
UNIT_NAMES = ("tokens", "sentences")

# schemes whose control unit is fixed by construction
_FORCED_UNITS = {"repilot": "tokens", "sentenum": "sentences",
                 "sentprefix": "sentences"}

_PREFIX_SN_RE = re.compile(r"^\s*\[SN\]\s*([^\[\]]*?)\s*\[SEP\]\s*")
_INLINE_SN_RE = re.compile(r"\[SN\]\s?[0-9]+\s?")
_PREFIX_BKT_RE = re.compile(r"^\s*\[BKT([0-9]+)\]\s*")
_INLINE_BKT_RE = re.compile(r"\[BKT[0-9]+\]\s?")


@dataclass(frozen=True)
class ControlScheme:
    """A named control scheme plus the state it needs at annotation time."""

    name: str
    unit: str = "tokens"
    bucket_edges: tuple[float, ...] = ()

    def __post_init__(self):
        if self.name not in SCHEME_NAMES:
            raise ConfigError(f"unknown control scheme {self.name!r}; "
                              f"expected one of {SCHEME_NAMES}")
        if self.unit not in UNIT_NAMES:
            raise ConfigError(f"unknown control unit {self.unit!r}; "
                              f"expected one of {UNIT_NAMES}")
        forced = _FORCED_UNITS.get(self.name)
        if forced is not None and self.unit != forced:
            raise ConfigError(f"scheme {self.name!r} counts {forced}, "
                              f"not {self.unit}")
        if self.bucket_edges and self.name != "buckets":
            raise ConfigError(f"bucket_edges only apply to the 'buckets' "
                              f"scheme, not {self.name!r}")
        object.__setattr__(self, "bucket_edges", tuple(float(e) for e in self.bucket_edges))

    @property
    def num_buckets(self) -> int:
        return len(self.bucket_edges)

    def with_edges(self, edges: tuple[float, ...]) -> "ControlScheme":
        return ControlScheme(self.name, self.unit, tuple(edges))


def gold_length(example: ControlledExample, scheme: ControlScheme) -> int:
    """The example's reference length in the scheme's unit."""
    return example.gold_sents if scheme.unit == "sentences" else example.gold_tokens


def scheme_to_record(scheme: ControlScheme) -> dict:
    """JSON-safe form of a scheme (the open top bucket edge is implied)."""
    finite = [e for e in scheme.bucket_edges if math.isfinite(e)]
    return {"name": scheme.name, "unit": scheme.unit,
            "finite_edges": finite, "num_buckets": scheme.num_buckets}


def scheme_from_record(record: dict) -> ControlScheme:
    """Inverse of `scheme_to_record`."""
    try:
        name = record["name"]
        unit = record["unit"]
        finite = record.get("finite_edges", [])
        num_buckets = record.get("num_buckets", 0)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed control-scheme record: {record!r}") from exc
    edges: tuple[float, ...] = ()
    if num_buckets:
        if len(finite) != num_buckets - 1:
            raise ConfigError(f"control-scheme record lists {len(finite)} "
                              f"finite edges for {num_buckets} buckets")
        edges = tuple(float(e) for e in finite) + (math.inf,)
    return ControlScheme(name=name, unit=unit, bucket_edges=edges)


def compute_bucket_edges(lengths: list[int], num_buckets: int) -> tuple[float, ...]:
    """Fixed-width bucket upper bounds covering lengths up to their P99.

    Width is ``ceil(P99 / num_buckets)``; bucket i covers
    ``[i*width, (i+1)*width)`` and the last bucket is open-ended.
    """
    if num_buckets < 1:
        raise ValueError(f"need at least one bucket, got {num_buckets}")
    if num_buckets > NUM_BUCKET_TOKENS:
        raise ValueError(f"at most {NUM_BUCKET_TOKENS} buckets are supported, "
                         f"got {num_buckets}")
    if not lengths:
        raise ValueError("cannot fit bucket edges on an empty length sample")
    p99 = _nearest_rank(sorted(lengths), 0.99)
    width = max(1, math.ceil(p99 / num_buckets))
    edges = [float((i + 1) * width) for i in range(num_buckets - 1)]
    edges.append(math.inf)
    return tuple(edges)


def bucket_index(length: int, scheme: ControlScheme) -> int:
    """Index of the bucket containing ``length`` (last bucket is open)."""
    if scheme.name != "buckets" or not scheme.bucket_edges:
        raise ConfigError("bucket_index requires a 'buckets' scheme with "
                          "fitted edges")
    if length < 0:
        raise ValueError(f"length must be non-negative, got {length}")
    for i, edge in enumerate(scheme.bucket_edges):
        if length < edge:
            return i
    return len(scheme.bucket_edges) - 1


def bucket_midpoint(index: int, scheme: ControlScheme) -> int:
    """Representative length for a bucket: the midpoint of its range.

    The open-ended last bucket uses its lower edge plus half the fixed
    width of the other buckets.
    """
    if scheme.name != "buckets" or not scheme.bucket_edges:
        raise ConfigError("bucket_midpoint requires a 'buckets' scheme with "
                          "fitted edges")
    if not 0 <= index < scheme.num_buckets:
        raise ValueError(f"bucket index {index} out of range "
                         f"[0, {scheme.num_buckets})")
    edges = scheme.bucket_edges
    width = edges[0] if len(edges) > 1 else 2.0
    lower = 0.0 if index == 0 else edges[index - 1]
    upper = edges[index]
    if not math.isfinite(upper):
        upper = lower + width
    mid = (lower + upper) / 2.0
    return max(1, int(math.floor(mid + 0.5)))


def annotate_sentenum(summary: str, num_sentences: int | None = None) -> str:
    """Prefix the sentence count and number each sentence inline."""
    spans = split_sentences(summary)
    if num_sentences is None:
        num_sentences = len(spans)
    if num_sentences != len(spans):
        raise ValueError(f"summary splits into {len(spans)} sentences but "
                         f"{num_sentences} were declared")
    parts = [f"{SN_TOKEN}{num_sentences} {SEP_TOKEN}"]
    for k, (start, stop) in enumerate(spans, start=1):
        parts.append(f"{SN_TOKEN}{k} {summary[start:stop]}")
    return " ".join(parts)


def annotate_sentprefix(summary: str, num_sentences: int | None = None) -> str:
    """Prefix the sentence count; leave the body untouched."""
    if num_sentences is None:
        num_sentences = len(split_sentences(summary))
    return f"{SN_TOKEN}{num_sentences} {SEP_TOKEN} {summary}"


def annotate_buckets(summary: str, length: int, scheme: ControlScheme) -> str:
    """Prefix the bucket token for ``length`` in the scheme's unit."""
    return f"{bucket_token(bucket_index(length, scheme))} {summary}"


def annotate(example: ControlledExample, scheme: ControlScheme) -> str:
    """The summary text a model should be trained to emit under ``scheme``."""
    if scheme.name in ("none", "repilot"):
        return example.summary.text
    if scheme.name == "sentenum":
        return annotate_sentenum(example.summary.text, example.gold_sents)
    if scheme.name == "sentprefix":
        return annotate_sentprefix(example.summary.text, example.gold_sents)
    if scheme.name == "buckets":
        return annotate_buckets(example.summary.text,
                                gold_length(example, scheme), scheme)
    raise ConfigError(f"unknown control scheme {scheme.name!r}")


def strip_sentenum(text: str) -> tuple[str, int | None]:
    """Remove sentence-count markup; report the claimed count if well formed.

    Returns ``(body, claimed)`` where ``claimed`` is the integer between the
    leading ``[SN]`` and ``[SEP]`` or ``None`` when that slot is missing or
    not a number.  Inline ``[SN]<k>`` tags are dropped wherever they appear;
    ordinary numbers in the body are left alone.
    """
    claimed: int | None = None
    match = _PREFIX_SN_RE.match(text)
    if match:
        slot = match.group(1).replace(" ", "")
        if slot.isdigit():
            claimed = int(slot)
        text = text[match.end():]
    text = _INLINE_SN_RE.sub("", text)
    return text.strip(), claimed


def strip_bucket(text: str) -> tuple[str, int | None]:
    """Remove bucket markup; report the leading token's index if present.

    Stray bucket tokens later in the text carry no claim but are dropped
    from the body so they never count toward measured length.
    """
    claimed: int | None = None
    match = _PREFIX_BKT_RE.match(text)
    if match:
        claimed = int(match.group(1))
        text = text[match.end():]
    return _INLINE_BKT_RE.sub("", text).strip(), claimed


def strip_control(text: str, scheme: ControlScheme) -> tuple[str, int | None]:
    """Undo ``annotate`` on generated text.

    Returns the plain body plus the claimed length (sentence-count schemes)
    or claimed bucket index (buckets); ``None`` where the scheme carries no
    textual claim or the markup is malformed.
    """
    if scheme.name in ("none", "repilot"):
        return text.strip(), None
    if scheme.name in ("sentenum", "sentprefix"):
        return strip_sentenum(text)
    if scheme.name == "buckets":
        return strip_bucket(text)
    raise ConfigError(f"unknown control scheme {scheme.name!r}")
