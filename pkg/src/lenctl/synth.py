"""Synthetic document/summary corpus for length-control experiments.

Each document is 8-20 templated sentences; K of them carry a salience marker
("Notably"/"Crucially") and the reference summary paraphrases exactly those K
sentences in order, so an exact oracle summary exists.  The marker also fixes
the paraphrase form (drop vs. keep the place clause), which keeps the mapping
from document to summary deterministic while spreading token lengths.  K
follows a configurable categorical distribution over 1..8 whose default has
mean ~3.8 and nearest-rank P95 of 6.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .text import ControlledExample

SUBJECTS = ("fox", "hen", "otter", "badger", "heron", "lynx",
            "crow", "hare", "mole", "stoat", "wren", "toad")
VERBS = ("chased", "watched", "startled", "followed", "ignored",
         "approached", "circled", "avoided", "greeted", "copied")
OBJECTS = ("lantern", "basket", "wagon", "kite", "drum", "ladder",
           "bucket", "mirror", "bell", "rope", "plough", "crate")
PLACES = ("barn", "orchard", "millpond", "hedgerow", "meadow",
          "quarry", "footbridge", "granary", "paddock", "windmill")
ADJECTIVES = ("red", "old", "sly", "quiet", "bold", "gray", "young", "swift")
DAYPARTS = ("morning", "afternoon", "evening", "night", "dawn", "dusk")

# marker word -> whether the summary paraphrase keeps the place clause
MARKERS = {"Notably": False, "Crucially": True}

FILLER_TEMPLATES = (
    "The {place} stayed quiet.",
    "Light rain fell over the {place}.",
    "Nothing happened near the {place}.",
    "The {daypart} air drifted past.",
    "A cart passed the {place}.",
    "The gate by the {place} creaked.",
)

DEFAULT_LENGTH_WEIGHTS = (0.06, 0.14, 0.24, 0.26, 0.16, 0.10, 0.03, 0.01)


@dataclass
class SynthSpec:
    """Knobs for one generated corpus."""

    size: int
    length_weights: tuple[float, ...] = DEFAULT_LENGTH_WEIGHTS
    min_doc_sentences: int = 8
    max_doc_sentences: int = 20
    adjective_rate: float = 0.5

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"corpus size must be positive, got {self.size}")
        if self.min_doc_sentences < len(self.length_weights):
            raise ValueError("documents must hold at least as many sentences "
                             "as the largest summary length")
        if self.max_doc_sentences < self.min_doc_sentences:
            raise ValueError("max_doc_sentences must be >= min_doc_sentences")
        total = float(sum(self.length_weights))
        if total <= 0:
            raise ValueError("length weights must have positive mass")
        self.length_weights = tuple(w / total for w in self.length_weights)


@dataclass
class _SalientFacts:
    marker: str
    adjective: str | None
    subject: str
    verb: str
    obj: str
    place: str

    def document_sentence(self) -> str:
        adj = f"{self.adjective} " if self.adjective else ""
        return (f"{self.marker}, the {adj}{self.subject} {self.verb} "
                f"the {self.obj} near the {self.place}.")

    def summary_sentence(self) -> str:
        adj = f"{self.adjective} " if self.adjective else ""
        tail = f" near the {self.place}" if MARKERS[self.marker] else ""
        return f"The {adj}{self.subject} {self.verb} the {self.obj}{tail}."


def _draw_salient(rng: np.random.Generator, adjective_rate: float) -> _SalientFacts:
    marker = tuple(MARKERS)[rng.integers(len(MARKERS))]
    adjective = (ADJECTIVES[rng.integers(len(ADJECTIVES))]
                 if rng.random() < adjective_rate else None)
    return _SalientFacts(
        marker=marker,
        adjective=adjective,
        subject=SUBJECTS[rng.integers(len(SUBJECTS))],
        verb=VERBS[rng.integers(len(VERBS))],
        obj=OBJECTS[rng.integers(len(OBJECTS))],
        place=PLACES[rng.integers(len(PLACES))],
    )


def _draw_filler(rng: np.random.Generator) -> str:
    template = FILLER_TEMPLATES[rng.integers(len(FILLER_TEMPLATES))]
    return template.format(place=PLACES[rng.integers(len(PLACES))],
                           daypart=DAYPARTS[rng.integers(len(DAYPARTS))])


def generate_example(rng: np.random.Generator, spec: SynthSpec) -> ControlledExample:
    k = int(rng.choice(len(spec.length_weights), p=spec.length_weights)) + 1
    n = int(rng.integers(spec.min_doc_sentences, spec.max_doc_sentences + 1))
    salient_at = set(np.sort(rng.choice(n, size=k, replace=False)).tolist())
    doc_sentences: list[str] = []
    summary_sentences: list[str] = []
    for pos in range(n):
        if pos in salient_at:
            facts = _draw_salient(rng, spec.adjective_rate)
            doc_sentences.append(facts.document_sentence())
            summary_sentences.append(facts.summary_sentence())
        else:
            doc_sentences.append(_draw_filler(rng))
    return ControlledExample.from_texts(" ".join(doc_sentences),
                                        " ".join(summary_sentences))


def generate_synthetic_corpus(spec: SynthSpec, seed: int) -> list[ControlledExample]:
    """Deterministic corpus: same spec and seed give the same examples."""
    rng = np.random.default_rng(seed)
    return [generate_example(rng, spec) for _ in range(spec.size)]
