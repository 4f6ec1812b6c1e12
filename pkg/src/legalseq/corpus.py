"""Corpus ingestion, BIO conversion, and dataset statistics.

All character offsets are Unicode code-point indices into the *original*
document text. The raw text is never rewritten: empty lines, stray
whitespace, and typos are preserved, and every prediction is reported in
original offsets. Loading twice yields identical structures.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import (
    AlignmentError,
    ContractError,
    CorpusFormatError,
    CorpusIntegrityError,
    LabelError,
)

SHORT_SENTENCE_TOKENS = 20  # sentences below this length are counted as noise-band

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


# ---------------------------------------------------------------------------
# label sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelSet:
    """Ordered, unique label names with a bijective index <-> name mapping."""

    names: tuple[str, ...]
    kind: str  # "rhetorical_role" | "entity"

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            dupes = [n for n, c in Counter(self.names).items() if c > 1]
            raise LabelError(f"duplicate label names: {dupes}")
        if self.kind not in ("rhetorical_role", "entity"):
            raise LabelError(f"unknown label-set kind: {self.kind!r}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LabelError(f"unknown label {name!r}; known: {list(self.names)}") from None

    def name(self, idx: int) -> str:
        return self.names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    @staticmethod
    def from_file(path: str | Path) -> "LabelSet":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        return LabelSet(names=tuple(raw["names"]), kind=raw["kind"])

    @staticmethod
    def default_rr() -> "LabelSet":
        ls = _load_packaged_labels("rr_labels.json")
        if len(ls) != 13:
            raise LabelError(f"default rhetorical-role label set must have 13 entries, got {len(ls)}")
        return ls

    @staticmethod
    def default_ner() -> "LabelSet":
        ls = _load_packaged_labels("ner_labels.json")
        if len(ls) != 14:
            raise LabelError(f"default entity label set must have 14 entries, got {len(ls)}")
        return ls


def _load_packaged_labels(fname: str) -> LabelSet:
    raw = json.loads(resources.files("legalseq.data").joinpath(fname).read_text("utf-8"))
    return LabelSet(names=tuple(raw["names"]), kind=raw["kind"])


# ---------------------------------------------------------------------------
# documents and spans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SentenceSpan:
    start_char: int
    end_char: int
    surface: str
    rr_label: int | None = None


@dataclass(frozen=True)
class Document:
    """A legal judgment as an ordered sentence sequence over immutable text."""

    doc_id: str
    text: str
    sentences: tuple[SentenceSpan, ...]

    def __post_init__(self) -> None:
        prev_end = -1
        for s in self.sentences:
            if not (0 <= s.start_char < s.end_char <= len(self.text)):
                raise CorpusIntegrityError(
                    f"doc {self.doc_id!r}: span ({s.start_char},{s.end_char}) out of range "
                    f"for text of length {len(self.text)}"
                )
            if s.start_char < prev_end:
                raise CorpusIntegrityError(
                    f"doc {self.doc_id!r}: sentence spans overlap at {s.start_char}"
                )
            if self.text[s.start_char:s.end_char] != s.surface:
                raise CorpusIntegrityError(
                    f"doc {self.doc_id!r}: surface mismatch at ({s.start_char},{s.end_char})"
                )
            prev_end = s.end_char

    @property
    def labels(self) -> list[int | None]:
        return [s.rr_label for s in self.sentences]


@dataclass(frozen=True)
class EntitySpan:
    start_char: int
    end_char: int
    label: int
    surface: str

    def __post_init__(self) -> None:
        if self.end_char <= self.start_char:
            raise CorpusIntegrityError(
                f"degenerate entity span ({self.start_char},{self.end_char})"
            )


@dataclass(frozen=True)
class NerExample:
    """One NER record: raw text plus its non-overlapping gold entities."""

    doc_id: str
    text: str
    entities: tuple[EntitySpan, ...]


@dataclass(frozen=True)
class Token:
    surface: str
    start_char: int
    end_char: int


@dataclass(frozen=True)
class TagSequence:
    """Tokens with aligned BIO tag indices (0 = O, then B/I pairs per label)."""

    tokens: tuple[Token, ...]
    tags: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.tags):
            raise ContractError(
                f"tag/token length mismatch: {len(self.tags)} vs {len(self.tokens)}"
            )


@dataclass
class CorpusStats:
    sentence_length_histogram: dict[int, int] = field(default_factory=dict)
    class_counts: dict[str, int] = field(default_factory=dict)
    doc_count: int = 0
    sentence_count: int = 0
    short_sentence_count: int = 0


# ---------------------------------------------------------------------------
# reference tokenizer
# ---------------------------------------------------------------------------

def tokenize_with_offsets(text: str) -> list[Token]:
    """Whitespace+punctuation split with recorded code-point offsets.

    This is the reference tokenization for BIO tagging and statistics;
    encoder backends may subtokenize internally but map back to these
    tokens by first-subtoken representation.
    """
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


# ---------------------------------------------------------------------------
# JSON corpus I/O
# ---------------------------------------------------------------------------
# One document per record: {"id", "data": {"text"} (or top-level "text"),
# "annotations": [{"start", "end", "label", "text"?}]}. Predictions are
# written in the identical schema.

def _read_records(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"corpus file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            records = json.load(f)
    except json.JSONDecodeError as e:
        raise CorpusFormatError(
            f"{path}: malformed JSON at position {e.pos} (line {e.lineno}, col {e.colno}): {e.msg}"
        ) from e
    if not isinstance(records, list):
        raise CorpusFormatError(f"{path}: expected a top-level JSON array of records")
    return records


def _record_text(rec: dict, where: str) -> str:
    data = rec.get("data")
    if isinstance(data, dict) and isinstance(data.get("text"), str):
        return data["text"]
    if isinstance(rec.get("text"), str):
        return rec["text"]
    raise CorpusFormatError(f"{where}: record has neither data.text nor text")


def _record_annotations(rec: dict, where: str) -> list[dict]:
    anns = rec.get("annotations", [])
    if not isinstance(anns, list):
        raise CorpusFormatError(f"{where}: annotations must be a list")
    for a in anns:
        if not isinstance(a, dict) or "start" not in a or "end" not in a or "label" not in a:
            raise CorpusFormatError(f"{where}: annotation must carry start/end/label: {a!r}")
    return anns


def _check_annotation_labels(anns: Iterable[dict], labels: LabelSet, where: str) -> None:
    unknown = sorted({a["label"] for a in anns if a["label"] not in labels})
    if unknown:
        raise LabelError(f"{where}: unknown label strings {unknown}; known: {list(labels.names)}")


def load_rr_corpus(path: str | Path, labels: LabelSet) -> list[Document]:
    """Load a rhetorical-role corpus; one Document per record, sentences in order.

    Offsets are validated against the raw text. Unknown label strings are a
    hard error listing every offender. Empty lines in the text are preserved.
    """
    docs: list[Document] = []
    for i, rec in enumerate(_read_records(path)):
        doc_id = str(rec.get("id", i))
        where = f"{path} record {i} (id {doc_id!r})"
        text = _record_text(rec, where)
        anns = _record_annotations(rec, where)
        _check_annotation_labels(anns, labels, where)
        sentences = []
        for a in sorted(anns, key=lambda a: (a["start"], a["end"])):
            start, end = int(a["start"]), int(a["end"])
            if not (0 <= start < end <= len(text)):
                raise CorpusIntegrityError(
                    f"{where}: annotation offsets ({start},{end}) out of range for "
                    f"text of length {len(text)}"
                )
            surface = text[start:end]
            if "text" in a and a["text"] != surface:
                raise CorpusIntegrityError(
                    f"{where}: stored surface {a['text']!r} does not match text slice {surface!r}"
                )
            sentences.append(
                SentenceSpan(start, end, surface, rr_label=labels.index(a["label"]))
            )
        docs.append(Document(doc_id=doc_id, text=text, sentences=tuple(sentences)))
    return docs


def load_ner_corpus(path: str | Path, labels: LabelSet) -> list[NerExample]:
    """Load an entity corpus; overlapping gold spans are rejected naming both."""
    examples: list[NerExample] = []
    for i, rec in enumerate(_read_records(path)):
        doc_id = str(rec.get("id", i))
        where = f"{path} record {i} (id {doc_id!r})"
        text = _record_text(rec, where)
        anns = _record_annotations(rec, where)
        _check_annotation_labels(anns, labels, where)
        spans = []
        for a in sorted(anns, key=lambda a: (a["start"], a["end"])):
            start, end = int(a["start"]), int(a["end"])
            if not (0 <= start < end <= len(text)):
                raise CorpusIntegrityError(
                    f"{where}: annotation offsets ({start},{end}) out of range for "
                    f"text of length {len(text)}"
                )
            surface = text[start:end]
            if "text" in a and a["text"] != surface:
                raise CorpusIntegrityError(
                    f"{where}: stored surface {a['text']!r} does not match text slice {surface!r}"
                )
            spans.append(EntitySpan(start, end, labels.index(a["label"]), surface))
        for prev, cur in zip(spans, spans[1:]):
            if cur.start_char < prev.end_char:
                raise CorpusIntegrityError(
                    f"{where}: overlapping gold spans "
                    f"({prev.start_char},{prev.end_char},{labels.name(prev.label)}) and "
                    f"({cur.start_char},{cur.end_char},{labels.name(cur.label)})"
                )
        examples.append(NerExample(doc_id=doc_id, text=text, entities=tuple(spans)))
    return examples


def load_rr_corpus_for_prediction(path: str | Path) -> list[Document]:
    """Load sentence boundaries for prediction; label strings are optional."""
    docs: list[Document] = []
    for i, rec in enumerate(_read_records(path)):
        doc_id = str(rec.get("id", i))
        where = f"{path} record {i} (id {doc_id!r})"
        text = _record_text(rec, where)
        anns = rec.get("annotations", [])
        sentences = []
        for a in sorted(anns, key=lambda a: (a["start"], a["end"])):
            start, end = int(a["start"]), int(a["end"])
            if not (0 <= start < end <= len(text)):
                raise CorpusIntegrityError(
                    f"{where}: annotation offsets ({start},{end}) out of range"
                )
            sentences.append(SentenceSpan(start, end, text[start:end], rr_label=None))
        docs.append(Document(doc_id=doc_id, text=text, sentences=tuple(sentences)))
    return docs


def load_ner_corpus_for_prediction(path: str | Path) -> list[NerExample]:
    """Load texts for prediction; any annotations present are ignored."""
    examples = []
    for i, rec in enumerate(_read_records(path)):
        doc_id = str(rec.get("id", i))
        text = _record_text(rec, f"{path} record {i} (id {doc_id!r})")
        examples.append(NerExample(doc_id=doc_id, text=text, entities=()))
    return examples


def _annotation_dict(start: int, end: int, label: str, surface: str) -> dict:
    return {"start": start, "end": end, "label": label, "text": surface}


def save_rr_corpus(docs: Sequence[Document], labels: LabelSet, path: str | Path) -> None:
    records = []
    for d in docs:
        anns = [
            _annotation_dict(s.start_char, s.end_char, labels.name(s.rr_label), s.surface)
            for s in d.sentences
            if s.rr_label is not None
        ]
        records.append({"id": d.doc_id, "data": {"text": d.text}, "annotations": anns})
    write_json(records, path)


def save_ner_corpus(examples: Sequence[NerExample], labels: LabelSet, path: str | Path) -> None:
    records = []
    for ex in examples:
        anns = [
            _annotation_dict(e.start_char, e.end_char, labels.name(e.label), e.surface)
            for e in ex.entities
        ]
        records.append({"id": ex.doc_id, "data": {"text": ex.text}, "annotations": anns})
    write_json(records, path)


def write_json(obj, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, ensure_ascii=False, indent=1)
        f.write("\n")


# ---------------------------------------------------------------------------
# BIO tagging
# ---------------------------------------------------------------------------
# Tag vocabulary over a label set of size E: index 0 is O, label k maps to
# B at 1+2k and I at 2+2k, giving 2E+1 tags.

def bio_tag_names(labels: LabelSet) -> list[str]:
    names = ["O"]
    for n in labels.names:
        names.extend((f"B-{n}", f"I-{n}"))
    return names


def bio_b(label: int) -> int:
    return 1 + 2 * label


def bio_i(label: int) -> int:
    return 2 + 2 * label


def bio_split(tag: int) -> tuple[str, int]:
    """Return ("O"|"B"|"I", label index); label is -1 for O."""
    if tag == 0:
        return "O", -1
    kind = "B" if tag % 2 == 1 else "I"
    return kind, (tag - 1) // 2


def to_bio(
    tokens: Sequence[Token],
    spans: Sequence[EntitySpan],
    labels: LabelSet,
    policy: str = "expand",
) -> TagSequence:
    """Project character spans onto tokens as BIO tags.

    ``expand`` (default) snaps a span outward to the boundaries of every
    token it overlaps; ``strict`` raises when a span boundary falls inside
    a token. A span overlapping no token at all is an error under both.
    """
    if policy not in ("expand", "strict"):
        raise ContractError(f"unknown alignment policy {policy!r}")
    ordered = sorted(spans, key=lambda s: (s.start_char, s.end_char))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start_char < prev.end_char:
            raise CorpusIntegrityError(
                f"overlapping spans ({prev.start_char},{prev.end_char}) and "
                f"({cur.start_char},{cur.end_char})"
            )
    tags = [0] * len(tokens)
    for span in ordered:
        covered = [
            i for i, t in enumerate(tokens)
            if t.start_char < span.end_char and t.end_char > span.start_char
        ]
        if not covered:
            raise AlignmentError(
                f"span ({span.start_char},{span.end_char}) overlaps no token"
            )
        first, last = covered[0], covered[-1]
        if policy == "strict":
            if tokens[first].start_char != span.start_char or tokens[last].end_char != span.end_char:
                raise AlignmentError(
                    f"span ({span.start_char},{span.end_char}) misaligned; nearest token "
                    f"boundaries are ({tokens[first].start_char},{tokens[last].end_char})"
                )
        tags[first] = bio_b(span.label)
        for i in covered[1:]:
            tags[i] = bio_i(span.label)
    return TagSequence(tokens=tuple(tokens), tags=tuple(tags))


def from_bio(seq: TagSequence, labels: LabelSet | None = None, strict: bool = False) -> list[EntitySpan]:
    """Decode maximal B/I runs back to character spans.

    Invalid transitions (I-X after O, or I-X after a different label) are
    repaired by treating the stray I as a B; ``strict`` raises instead.
    Inference paths always use the repair mode. ``labels`` is only needed
    for readable strict-mode errors.
    """
    spans: list[EntitySpan] = []
    open_start: int | None = None
    open_label = -1

    def name(label: int) -> str:
        return labels.name(label) if labels is not None else str(label)

    def close(upto: int) -> None:
        nonlocal open_start
        if open_start is not None:
            start = seq.tokens[open_start].start_char
            end = seq.tokens[upto].end_char
            surface_tokens = seq.tokens[open_start:upto + 1]
            # surface reconstructed from token offsets is a best effort; caller
            # slices the original text when it is available
            spans.append(EntitySpan(start, end, open_label,
                                    _join_surface(surface_tokens)))
        open_start = None

    for i, tag in enumerate(seq.tags):
        kind, label = bio_split(tag)
        if kind == "O":
            close(i - 1)
        elif kind == "B":
            close(i - 1)
            open_start, open_label = i, label
        else:  # I
            if open_start is None or label != open_label:
                if strict:
                    raise AlignmentError(
                        f"invalid BIO transition at token {i}: I-{name(label)} "
                        f"follows {'O' if open_start is None else 'I-' + name(open_label)}"
                    )
                close(i - 1)
                open_start, open_label = i, label
    close(len(seq.tags) - 1)
    return spans


def _join_surface(tokens: Sequence[Token]) -> str:
    parts = [tokens[0].surface]
    for prev, cur in zip(tokens, tokens[1:]):
        parts.append(" " * (cur.start_char - prev.end_char))
        parts.append(cur.surface)
    return "".join(parts)


def slice_surfaces(text: str, spans: Iterable[EntitySpan]) -> list[EntitySpan]:
    """Rebuild span surfaces from the original text (exact, offset-true)."""
    return [
        EntitySpan(s.start_char, s.end_char, s.label, text[s.start_char:s.end_char])
        for s in spans
    ]


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def compute_stats(docs: Sequence[Document], labels: LabelSet | None = None) -> CorpusStats:
    """Token-length histogram and per-label sentence counts over a corpus.

    Sentences shorter than 20 tokens contribute to the short-sentence
    count (the noise band that hurts sentence-level classification).
    """
    stats = CorpusStats(doc_count=len(docs))
    counts: Counter[str] = Counter()
    hist: Counter[int] = Counter()
    for doc in docs:
        for s in doc.sentences:
            n_tokens = len(tokenize_with_offsets(s.surface))
            hist[n_tokens] += 1
            stats.sentence_count += 1
            if n_tokens < SHORT_SENTENCE_TOKENS:
                stats.short_sentence_count += 1
            if s.rr_label is not None:
                name = labels.name(s.rr_label) if labels is not None else str(s.rr_label)
                counts[name] += 1
    stats.sentence_length_histogram = dict(sorted(hist.items()))
    stats.class_counts = dict(sorted(counts.items()))
    return stats


def compute_ner_stats(examples: Sequence[NerExample], labels: LabelSet) -> CorpusStats:
    """Entity-label counts plus text-token-length histogram for NER corpora."""
    stats = CorpusStats(doc_count=len(examples))
    counts: Counter[str] = Counter()
    hist: Counter[int] = Counter()
    for ex in examples:
        n_tokens = len(tokenize_with_offsets(ex.text))
        hist[n_tokens] += 1
        stats.sentence_count += 1
        if n_tokens < SHORT_SENTENCE_TOKENS:
            stats.short_sentence_count += 1
        for e in ex.entities:
            counts[labels.name(e.label)] += 1
    stats.sentence_length_histogram = dict(sorted(hist.items()))
    stats.class_counts = dict(sorted(counts.items()))
    return stats
