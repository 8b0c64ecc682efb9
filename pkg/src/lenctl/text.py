"""Tokenization, rule-based sentence splitting, corpora and their statistics.

The word tokenizer is case-preserving and splits punctuation into single
tokens; digits are always single tokens so numbers of any magnitude compose
from the reserved digit vocabulary.  ``detokenize`` joins with single spaces,
re-fusing digit runs (and ``[SN]`` + digits) so annotated text round-trips.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
SN_TOKEN = "[SN]"
SEP_TOKEN = "[SEP]"
NUM_BUCKET_TOKENS = 100

RESERVED_TOKENS: tuple[str, ...] = (
    (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, SN_TOKEN, SEP_TOKEN)
    + tuple(str(d) for d in range(10))
    + tuple(f"[BKT{i}]" for i in range(NUM_BUCKET_TOKENS))
)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SN_ID = 4
SEP_ID = 5
DIGIT_ID_BASE = 6  # ids 6..15 are the digit tokens "0".."9"
BUCKET_ID_BASE = 16

_TOKEN_RE = re.compile(r"\[SN\]|\[SEP\]|\[BKT[0-9]+\]|[A-Za-z]+|[0-9]|[^\sA-Za-z0-9]")

_ABBREVIATIONS = {
    "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "rev.",
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "al.", "fig.", "no.", "vol.",
    "inc.", "ltd.", "co.", "u.s.", "u.k.", "a.m.", "p.m.",
}


def word_split(text: str) -> list[str]:
    """Split text into surface tokens: words, single digits, punctuation."""
    return _TOKEN_RE.findall(text)


def bucket_token(index: int) -> str:
    if not 0 <= index < NUM_BUCKET_TOKENS:
        raise ValueError(f"bucket index {index} outside reserved range "
                         f"[0, {NUM_BUCKET_TOKENS})")
    return f"[BKT{index}]"


@dataclass
class Vocabulary:
    """Bijective token/id maps with a fixed reserved prefix (PAD is id 0)."""

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        id_to_token = list(tokens)
        if tuple(id_to_token[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved token prefix")
        token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
        if len(token_to_id) != len(id_to_token):
            raise ValueError("vocabulary tokens are not unique")
        return cls(id_to_token, token_to_id)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Reserved tokens first, then words by descending frequency, ties broken
    lexicographically, truncated to ``max_size``."""
    if max_size < len(RESERVED_TOKENS):
        raise ValueError(
            f"max_size {max_size} is smaller than the reserved prefix "
            f"({len(RESERVED_TOKENS)} tokens)")
    counts: Counter[str] = Counter()
    reserved = _reserved_set()
    for text in corpus:
        for tok in word_split(text):
            if tok not in reserved:
                counts[tok] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = list(RESERVED_TOKENS) + [tok for tok, _ in ranked]
    return Vocabulary.from_tokens(tokens[:max_size])


_RESERVED_SET: set[str] | None = None


def _reserved_set() -> set[str]:
    global _RESERVED_SET
    if _RESERVED_SET is None:
        _RESERVED_SET = set(RESERVED_TOKENS)
    return _RESERVED_SET


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id_of(tok) for tok in word_split(text)]


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Inverse of tokenize on canonical text: punctuation re-attaches to the
    preceding word and digit runs re-fuse into numbers."""
    parts: list[str] = []
    prev: str | None = None
    for idx in ids:
        tok = vocab.token_of(idx)
        fuse = prev is not None and (
            (tok.isdigit() and (prev.isdigit() or prev == SN_TOKEN))
            or (len(tok) == 1 and not tok.isalnum()))
        if parts and not fuse:
            parts.append(" ")
        parts.append(tok)
        prev = tok
    return "".join(parts)


def _preceding_word(text: str, dot_index: int) -> str:
    """The word ending at ``dot_index`` (inclusive), skipping one space."""
    j = dot_index - 1
    if j >= 0 and text[j] == " ":
        j -= 1
    start = j
    while start >= 0 and (text[start].isalnum() or text[start] == "."):
        start -= 1
    return text[start + 1:j + 1] + "."


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences.

    A boundary follows '.', '!' or '?' when whitespace and then an uppercase
    letter or digit come next; abbreviations from a bundled list suppress '.'
    boundaries.  Text without any boundary is one sentence.
    """
    n = len(text)
    spans: list[tuple[int, int]] = []
    start = 0
    while start < n and text[start].isspace():
        start += 1
    i = start
    while i < n:
        ch = text[i]
        if ch in ".!?":
            j = i + 1
            saw_space = False
            while j < n and text[j].isspace():
                saw_space = True
                j += 1
            next_starts = j < n and (text[j].isupper() or text[j].isdigit())
            is_abbrev = (ch == "." and
                         _preceding_word(text, i).lower() in _ABBREVIATIONS)
            if saw_space and next_starts and not is_abbrev:
                spans.append((start, i + 1))
                start = j
                i = j
                continue
        i += 1
    if start < n:
        end = n
        while end > start and text[end - 1].isspace():
            end -= 1
        if end > start:
            spans.append((start, end))
    return spans


@dataclass
class Document:
    """Raw text plus its sentence spans (begin/end character offsets)."""

    text: str
    spans: list[tuple[int, int]]

    @classmethod
    def from_text(cls, text: str) -> "Document":
        return cls(text=text, spans=split_sentences(text))

    def sentences(self) -> list[str]:
        return [self.text[b:e] for b, e in self.spans]

    @property
    def num_sentences(self) -> int:
        return len(self.spans)


@dataclass
class ControlledExample:
    """One document/summary pair with its gold control targets."""

    document: Document
    summary: Document
    gold_tokens: int
    gold_sents: int
    control: str = "none"

    @classmethod
    def from_texts(cls, document: str, summary: str,
                   control: str = "none") -> "ControlledExample":
        doc = Document.from_text(document)
        summ = Document.from_text(summary)
        return cls(document=doc, summary=summ,
                   gold_tokens=len(word_split(summary)),
                   gold_sents=summ.num_sentences,
                   control=control)


@dataclass
class LengthStats:
    max: float
    min: float
    mean: float
    median: float
    p75: float
    p95: float
    std: float


@dataclass
class CorpusStats:
    n: int
    words: LengthStats
    sentences: LengthStats


def _nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    rank = int(np.ceil(q * len(sorted_values)))
    return float(sorted_values[max(rank, 1) - 1])


def _length_stats(values: list[int]) -> LengthStats:
    arr = np.sort(np.asarray(values, dtype=np.float64))
    return LengthStats(
        max=float(arr[-1]),
        min=float(arr[0]),
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        p75=_nearest_rank(arr, 0.75),
        p95=_nearest_rank(arr, 0.95),
        std=float(arr.std()),
    )


def corpus_stats(examples: Sequence[ControlledExample]) -> CorpusStats:
    """Summary-side length statistics with nearest-rank percentiles."""
    if not examples:
        raise ValueError("corpus_stats needs a non-empty example set")
    words = [len(word_split(ex.summary.text)) for ex in examples]
    sents = [ex.summary.num_sentences for ex in examples]
    return CorpusStats(n=len(examples),
                       words=_length_stats(words),
                       sentences=_length_stats(sents))


def write_corpus(path: str | Path, examples: Iterable[ControlledExample]) -> None:
    """One JSON object per line: document, summary, gold lengths, control."""
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            record = {
                "document": ex.document.text,
                "summary": ex.summary.text,
                "gold_tokens": ex.gold_tokens,
                "gold_sents": ex.gold_sents,
                "control": ex.control,
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_corpus(path: str | Path) -> list[ControlledExample]:
    examples: list[ControlledExample] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON") from exc
            if "document" not in record or "summary" not in record:
                raise DataError(f"{path}:{line_no}: missing document/summary field")
            doc = Document.from_text(record["document"])
            summ = Document.from_text(record["summary"])
            gold_tokens = record.get("gold_tokens",
                                     len(word_split(record["summary"])))
            gold_sents = record.get("gold_sents", summ.num_sentences)
            examples.append(ControlledExample(
                document=doc, summary=summ,
                gold_tokens=int(gold_tokens), gold_sents=int(gold_sents),
                control=record.get("control", "none")))
    if not examples:
        raise DataError(f"{path}: empty corpus")
    return examples


def read_documents(path: str | Path) -> list[str]:
    """Document texts from JSONL; rows need only a ``document`` field."""
    docs: list[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON") from exc
            if "document" not in record:
                raise DataError(f"{path}:{line_no}: missing document field")
            docs.append(record["document"])
    if not docs:
        raise DataError(f"{path}: no documents")
    return docs
