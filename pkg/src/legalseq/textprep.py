"""Sentence regularization and sentence-swap augmentation (RR baselines).

Regularization applies an ordered subset of six steps: lowercase, handle
removal, punctuation isolation/removal ('?' survives as its own token),
special-character removal, stopword removal (keeping configured
exceptions), and trailing-whitespace removal. The stopword list ships
with the package so runs are reproducible without downloads.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from importlib import resources

from .corpus import Document, SentenceSpan

ALL_STEPS = ("lowercase", "strip_handles", "punct_filter", "special_chars",
             "stopwords", "trailing_ws")

_HANDLE_RE = re.compile(r"@\w+")
# punctuation here: anything that is neither word char nor whitespace
_PUNCT_RE = re.compile(r"[^\w\s]")
_SPECIAL_RE = re.compile(r"[^a-z0-9A-Z\s?]")


def default_stopwords() -> frozenset[str]:
    text = resources.files("legalseq.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(w for w in text.split() if w)


@dataclass(frozen=True)
class RegularizeConfig:
    enabled_steps: tuple[str, ...] = ALL_STEPS
    stopword_list: frozenset[str] = field(default_factory=default_stopwords)
    stopword_exceptions: frozenset[str] = frozenset({"not", "can"})

    def __post_init__(self) -> None:
        unknown = [s for s in self.enabled_steps if s not in ALL_STEPS]
        if unknown:
            raise ValueError(f"unknown regularization steps: {unknown}")


def regularize(text: str, cfg: RegularizeConfig | None = None) -> str:
    """Apply the enabled regularization steps in their canonical order.

    Idempotent: a second pass over the output is the identity.
    """
    cfg = cfg or RegularizeConfig()
    steps = set(cfg.enabled_steps)
    if "lowercase" in steps:
        text = text.lower()
    if "strip_handles" in steps:
        text = _HANDLE_RE.sub(" ", text)
    if "punct_filter" in steps:
        text = _PUNCT_RE.sub(lambda m: " ? " if m.group() == "?" else " ", text)
    if "special_chars" in steps:
        text = _SPECIAL_RE.sub(" ", text)
    if "stopwords" in steps:
        keep = cfg.stopword_exceptions
        words = [w for w in text.split()
                 if w not in cfg.stopword_list or w in keep]
        text = " ".join(words)
    if "trailing_ws" in steps:
        # leading whitespace goes too: output never carries either end
        text = text.strip()
    return text


def regularize_document(doc: Document, cfg: RegularizeConfig | None = None) -> Document:
    """Regularize each sentence surface and rebuild a consistent document.

    The output document's text is the regularized sentences joined by
    newlines; offsets are recomputed so the Document invariants hold.
    """
    cfg = cfg or RegularizeConfig()
    surfaces = [regularize(s.surface, cfg) for s in doc.sentences]
    spans = []
    cursor = 0
    for orig, surf in zip(doc.sentences, surfaces):
        spans.append(SentenceSpan(cursor, cursor + len(surf), surf, orig.rr_label))
        cursor += len(surf) + 1
    text = "\n".join(surfaces)
    return Document(doc_id=doc.doc_id, text=text, sentences=tuple(spans))


def augment_swap(docs: list[Document], seed: int) -> list[Document]:
    """Double the corpus: originals plus one adjacent-pair swap per document.

    Each augmented copy swaps exactly one uniformly chosen adjacent
    sentence pair; labels travel with their sentences. Single-sentence
    documents are copied unswapped. Deterministic under a fixed seed.
    """
    rng = random.Random(seed)
    out = list(docs)
    for doc in docs:
        if len(doc.sentences) < 2:
            out.append(replace(doc, doc_id=f"{doc.doc_id}::aug"))
            continue
        j = rng.randrange(len(doc.sentences) - 1)
        out.append(_swap_adjacent(doc, j))
    return out


def _swap_adjacent(doc: Document, j: int) -> Document:
    """Swap sentences j and j+1, splicing the raw text so offsets stay true."""
    a, b = doc.sentences[j], doc.sentences[j + 1]
    gap = doc.text[a.end_char:b.start_char]
    text = doc.text[:a.start_char] + b.surface + gap + a.surface + doc.text[b.end_char:]
    new_a = SentenceSpan(a.start_char, a.start_char + len(b.surface), b.surface, b.rr_label)
    b_start = new_a.end_char + len(gap)
    new_b = SentenceSpan(b_start, b_start + len(a.surface), a.surface, a.rr_label)
    sentences = list(doc.sentences)
    sentences[j] = new_a
    sentences[j + 1] = new_b
    return Document(doc_id=f"{doc.doc_id}::aug", text=text, sentences=tuple(sentences))
