"""Legal NER: an entity-aware span classifier and two baseline heads.

The main model (``EntityAwareSpanClassifier``) takes a joint input of word
tokens and candidate entity spans. Word and entity rows are each the sum
of a token embedding, a type embedding (one value for words, one for
entities), and a position embedding; an entity's position embedding is
the sum of the position embeddings of the word positions it covers. A
bidirectional self-attentive encoder contextualizes all rows jointly
(every row attends to every row) and a linear head scores each entity
slot over the entity labels plus NONE.

Baselines share the corpus plumbing: ``TokenCrfTagger`` decodes BIO tags
with a linear-chain CRF over backend token vectors; ``SpanBoundaryTagger``
classifies [start; end; width] span representations.

Texts longer than ``max_len`` tokens are windowed with a fixed stride;
window predictions are merged in original character offsets. Final
outputs are always non-overlapping, within text bounds, and deterministic
in eval mode.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from . import crf
from .corpus import (
    EntitySpan,
    LabelSet,
    NerExample,
    TagSequence,
    Token,
    bio_b,
    bio_i,
    from_bio,
    tokenize_with_offsets,
)
from .encoder import encode_tokens, get_backend
from .errors import ConfigError, ContractError
from .windowing import chunk_ranges, owning_chunk


@dataclass
class SpanNerConfig:
    kind: str = "entity_aware"  # "entity_aware" | "token_crf" | "span_boundary"
    num_entity_labels: int = 14
    backend: str = "hash64"  # token encoder for the baseline heads
    max_len: int = 100  # word positions per window
    window_stride: int = 50
    max_span_width: int = 16
    max_entities: int = 128  # entity slots per forward pass
    neg_ratio: int = 3
    vocab_size: int = 32768  # hashed word-id space of the entity-aware model
    dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.1
    width_dim: int = 16
    encoder_trainable: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("entity_aware", "token_crf", "span_boundary"):
            raise ConfigError(f"unknown NER model kind {self.kind!r}")
        if self.window_stride < 1 or self.window_stride > self.max_len:
            raise ConfigError("window stride must be in [1, max_len]")
        if self.dim % self.num_heads != 0:
            raise ConfigError("dim must be divisible by num_heads")


# ---------------------------------------------------------------------------
# span candidates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpanCandidate:
    """Inclusive token-index span with its 1-based word positions."""

    start: int
    end: int
    word_positions: tuple[int, ...]

    @staticmethod
    def of(start: int, end: int) -> "SpanCandidate":
        if end < start or start < 0:
            raise ContractError(f"bad span candidate ({start},{end})")
        return SpanCandidate(start, end, tuple(range(start + 1, end + 2)))

    @property
    def width(self) -> int:
        return self.end - self.start + 1


def enumerate_spans(n: int, max_width: int) -> list[SpanCandidate]:
    """All spans of width <= max_width: width-major, then start-ascending."""
    if n < 1 or max_width < 1:
        raise ContractError("need n >= 1 and max_width >= 1")
    out = []
    for width in range(1, min(max_width, n) + 1):
        for start in range(n - width + 1):
            out.append(SpanCandidate.of(start, start + width - 1))
    return out


@dataclass(frozen=True)
class WordEntityInput:
    word_ids: tuple[int, ...]
    entity_slots: tuple[SpanCandidate, ...]

    def __post_init__(self) -> None:
        n = len(self.word_ids)
        if n < 1:
            raise ContractError("input needs at least one word")
        for slot in self.entity_slots:
            if slot.word_positions[0] < 1 or slot.word_positions[-1] > n:
                raise ContractError(
                    f"entity slot positions {slot.word_positions} out of [1, {n}]"
                )


@dataclass(frozen=True)
class ComposedEmbeddings:
    word_rows: Tensor  # N x D
    entity_rows: Tensor  # M x D


@dataclass(frozen=True)
class ContextualReprs:
    word_reprs: Tensor  # N x D
    entity_reprs: Tensor  # M x D


def hash_word_id(surface: str, vocab_size: int, salt: int = 0) -> int:
    digest = hashlib.blake2b(surface.encode(), key=str(salt).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size


class EmbeddingTables(nn.Module):
    """Token/type/position tables shared by words and entity slots."""

    WORD_TYPE = 0
    ENTITY_TYPE = 1

    def __init__(self, cfg: SpanNerConfig):
        super().__init__()
        self.token = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.entity_token = nn.Parameter(torch.zeros(cfg.dim))
        nn.init.normal_(self.entity_token, std=0.02)
        self.type_emb = nn.Embedding(2, cfg.dim)
        self.position = nn.Embedding(cfg.max_len + 1, cfg.dim)  # index 0 reserved


def compose_embeddings(inp: WordEntityInput, tables: EmbeddingTables) -> ComposedEmbeddings:
    """Sum token + type + position rows; entity positions are summed over words."""
    n = len(inp.word_ids)
    device = tables.token.weight.device
    ids = torch.as_tensor(inp.word_ids, dtype=torch.long, device=device)
    positions = torch.arange(1, n + 1, device=device)
    word_rows = (
        tables.token(ids)
        + tables.type_emb.weight[tables.WORD_TYPE]
        + tables.position(positions)
    )
    m = len(inp.entity_slots)
    if m == 0:
        entity_rows = word_rows.new_zeros((0, word_rows.shape[1]))
        return ComposedEmbeddings(word_rows, entity_rows)
    wmax = max(len(s.word_positions) for s in inp.entity_slots)
    padded = torch.zeros((m, wmax), dtype=torch.long, device=device)
    mask = torch.zeros((m, wmax), dtype=word_rows.dtype, device=device)
    for j, slot in enumerate(inp.entity_slots):
        w = len(slot.word_positions)
        padded[j, :w] = torch.as_tensor(slot.word_positions, device=device)
        mask[j, :w] = 1
    pos_sum = (tables.position(padded) * mask.unsqueeze(-1)).sum(dim=1)
    entity_rows = (
        tables.entity_token.unsqueeze(0)
        + tables.type_emb.weight[tables.ENTITY_TYPE]
        + pos_sum
    )
    return ComposedEmbeddings(word_rows, entity_rows)


# ---------------------------------------------------------------------------
# overlap resolution and label tie-breaks
# ---------------------------------------------------------------------------

def argmax_label(scores: np.ndarray, none_index: int) -> int:
    """Argmax with ties involving NONE resolving to NONE, else lowest index."""
    best = scores.max()
    if scores[none_index] == best:
        return none_index
    return int(np.argmax(scores))


def resolve_overlaps(
    scored: Iterable[tuple[int, int, int, float]],
    none_index: int | None = None,
) -> list[tuple[int, int, int]]:
    """Greedy non-overlap filter over (start, end, label, score) spans.

    NONE-labeled spans are dropped first; the rest are taken by descending
    score, ties by earlier start then shorter width. A span is kept iff it
    overlaps no already-kept span.
    """
    cands = [
        (s, e, lab, score)
        for s, e, lab, score in scored
        if none_index is None or lab != none_index
    ]
    cands.sort(key=lambda c: (-c[3], c[0], c[1] - c[0]))
    kept: list[tuple[int, int, int]] = []
    for s, e, lab, _ in cands:
        if all(e <= ks or s >= ke for ks, ke, _ in kept):
            kept.append((s, e, lab))
    kept.sort()
    return kept


# ---------------------------------------------------------------------------
# gold-span alignment and windowing over reference tokens
# ---------------------------------------------------------------------------

def align_span_to_tokens(
    tokens: Sequence[Token], span: EntitySpan, policy: str = "expand"
) -> tuple[int, int] | None:
    """Token index range covering a char span, or None when nothing overlaps.

    ``expand`` snaps outward to covering token boundaries; ``strict``
    returns the range only when the boundaries coincide exactly.
    """
    covered = [
        i for i, t in enumerate(tokens)
        if t.start_char < span.end_char and t.end_char > span.start_char
    ]
    if not covered:
        return None
    first, last = covered[0], covered[-1]
    if policy == "strict" and (
        tokens[first].start_char != span.start_char or tokens[last].end_char != span.end_char
    ):
        return None
    return first, last


def text_windows(tokens: Sequence[Token], max_len: int, stride: int) -> list[tuple[int, int]]:
    if not tokens:
        return []
    return chunk_ranges(len(tokens), max_len, max_len - stride)


@dataclass(frozen=True)
class WindowGold:
    """Token-aligned gold spans of one window: (start, end, label) triples."""

    tokens: tuple[Token, ...]
    spans: tuple[tuple[int, int, int], ...]


def window_gold(example: NerExample, cfg: SpanNerConfig) -> list[WindowGold]:
    """Windows with window-local token-aligned gold spans (expand policy).

    A gold span contributes to every window that fully contains it; spans
    wider than a window are dropped from training (never from evaluation).
    """
    tokens = tokenize_with_offsets(example.text)
    out = []
    for lo, hi in text_windows(tokens, cfg.max_len, cfg.window_stride):
        wtoks = tokens[lo:hi]
        spans = []
        for span in example.entities:
            rng = align_span_to_tokens(tokens, span)
            if rng is None:
                continue
            first, last = rng
            if first >= lo and last < hi and last - first + 1 <= cfg.max_span_width:
                spans.append((first - lo, last - lo, span.label))
        out.append(WindowGold(tokens=tuple(wtoks), spans=tuple(spans)))
    return out


# ---------------------------------------------------------------------------
# entity-aware span classifier
# ---------------------------------------------------------------------------

class EntityAwareSpanClassifier(nn.Module):
    """Joint word+entity encoding with per-slot classification."""

    def __init__(self, cfg: SpanNerConfig):
        super().__init__()
        if cfg.kind != "entity_aware":
            raise ConfigError("config kind must be 'entity_aware'")
        self.cfg = cfg
        self.none_index = cfg.num_entity_labels
        self.tables = EmbeddingTables(cfg)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.dim,
            nhead=cfg.num_heads,
            dim_feedforward=cfg.ffn_dim,
            dropout=cfg.dropout,
            batch_first=True,
            activation="gelu",
        )
        self.encoder = nn.TransformerEncoder(layer, cfg.num_layers)
        self.head = nn.Linear(cfg.dim, cfg.num_entity_labels + 1)

    def backend_id(self) -> str:
        return f"hash-vocab:{self.cfg.vocab_size}"

    def word_ids(self, tokens: Sequence[Token] | Sequence[str]) -> tuple[int, ...]:
        surfaces = [t.surface if isinstance(t, Token) else t for t in tokens]
        return tuple(hash_word_id(s, self.cfg.vocab_size) for s in surfaces)

    def compose(self, inp: WordEntityInput) -> ComposedEmbeddings:
        return compose_embeddings(inp, self.tables)

    def encode(self, composed: ComposedEmbeddings) -> ContextualReprs:
        """Full self-attention over concatenated word and entity rows."""
        n = composed.word_rows.shape[0]
        rows = torch.cat([composed.word_rows, composed.entity_rows], dim=0)
        encoded = self.encoder(rows.unsqueeze(0))[0]
        return ContextualReprs(word_reprs=encoded[:n], entity_reprs=encoded[n:])

    def classify_spans(self, entity_reprs: Tensor) -> Tensor:
        return self.head(entity_reprs)

    def forward(self, inp: WordEntityInput) -> Tensor:
        """Scores per entity slot over entity labels + NONE (last column)."""
        reprs = self.encode(self.compose(inp))
        return self.classify_spans(reprs.entity_reprs)

    # -- training ------------------------------------------------------------

    def build_training_items(self, prepared: list[WindowGold], rng) -> list:
        items = []
        for win in prepared:
            if not win.spans:
                continue
            n = len(win.tokens)
            gold_keys = {(s, e) for s, e, _ in win.spans}
            pool = [
                c for c in enumerate_spans(n, min(self.cfg.max_span_width, n))
                if (c.start, c.end) not in gold_keys
            ]
            n_neg = min(len(pool), self.cfg.neg_ratio * len(win.spans))
            negatives = rng.sample(pool, n_neg) if n_neg else []
            slots = [SpanCandidate.of(s, e) for s, e, _ in win.spans] + negatives
            labels = [lab for _, _, lab in win.spans] + [self.none_index] * len(negatives)
            items.append((self.word_ids(win.tokens), tuple(slots), tuple(labels)))
        return items

    def item_loss(self, item) -> Tensor:
        word_ids, slots, labels = item
        scores = self.forward(WordEntityInput(word_ids, slots))
        return nn.functional.cross_entropy(
            scores, torch.as_tensor(labels), reduction="sum"
        )

    # -- inference -------------------------------------------------------------

    def _score_window(self, word_ids: tuple[int, ...], cands: list[SpanCandidate]) -> np.ndarray:
        scores = self.forward(WordEntityInput(word_ids, tuple(cands)))
        return scores.detach().cpu().double().numpy()

    def _window_candidates(self, word_ids: tuple[int, ...], n: int) -> list[SpanCandidate]:
        cands = enumerate_spans(n, min(self.cfg.max_span_width, n))
        cap = self.cfg.max_entities
        if len(cands) <= cap:
            return cands
        # first pass: prune by descending NONE score, keep the most entity-like
        none_scores = np.concatenate([
            self._score_window(word_ids, cands[i:i + cap])[:, self.none_index]
            for i in range(0, len(cands), cap)
        ])
        keep = np.sort(np.argsort(none_scores, kind="stable")[:cap])
        return [cands[i] for i in keep]

    def predict_entities(self, text: str) -> list[EntitySpan]:
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                return self._predict_entities(text)
        finally:
            if was_training:
                self.train()

    def _predict_entities(self, text: str) -> list[EntitySpan]:
        tokens = tokenize_with_offsets(text)
        if not tokens:
            return []
        pooled: list[tuple[int, int, int, float]] = []
        for lo, hi in text_windows(tokens, self.cfg.max_len, self.cfg.window_stride):
            wtoks = tokens[lo:hi]
            ids = self.word_ids(wtoks)
            cands = self._window_candidates(ids, len(wtoks))
            scores = self._score_window(ids, cands)
            probs = _softmax_rows(scores)
            for cand, score_row, prob_row in zip(cands, scores, probs):
                label = argmax_label(score_row, self.none_index)
                if label == self.none_index:
                    continue
                pooled.append((
                    wtoks[cand.start].start_char,
                    wtoks[cand.end].end_char,
                    label,
                    float(prob_row[label]),
                ))
        kept = resolve_overlaps(pooled, none_index=None)
        return [EntitySpan(s, e, lab, text[s:e]) for s, e, lab in kept]


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# baseline: token-level BIO tagging with a CRF head
# ---------------------------------------------------------------------------

class TokenCrfTagger(nn.Module):
    """Backend token vectors -> linear BIO emissions -> linear-chain CRF."""

    def __init__(self, cfg: SpanNerConfig):
        super().__init__()
        if cfg.kind != "token_crf":
            raise ConfigError("config kind must be 'token_crf'")
        self.cfg = cfg
        self.backend = get_backend(cfg.backend, trainable=cfg.encoder_trainable)
        self.num_tags = 2 * cfg.num_entity_labels + 1
        self.emit = nn.Linear(self.backend.dim, self.num_tags)
        self.crf_params = crf.CrfParams(self.num_tags)
        self._vec_cache: dict[tuple[str, ...], Tensor] = {}

    def backend_id(self) -> str:
        return self.backend.backend_id

    def _window_vectors(self, tokens: Sequence[Token]) -> Tensor:
        surfaces = tuple(t.surface for t in tokens)
        if self.cfg.encoder_trainable:
            return encode_tokens(surfaces, self.backend, len(surfaces) + 2).vectors[1:-1]
        vecs = self._vec_cache.get(surfaces)
        if vecs is None:
            vecs = encode_tokens(surfaces, self.backend, len(surfaces) + 2).vectors[1:-1]
            self._vec_cache[surfaces] = vecs
        return vecs

    def window_emissions(self, tokens: Sequence[Token]) -> Tensor:
        return self.emit(self._window_vectors(tokens))

    def build_training_items(self, prepared: list[WindowGold], rng) -> list:
        items = []
        for win in prepared:
            tags = [0] * len(win.tokens)
            for s, e, lab in win.spans:
                tags[s] = bio_b(lab)
                for i in range(s + 1, e + 1):
                    tags[i] = bio_i(lab)
            items.append((win.tokens, tuple(tags)))
        return items

    def item_loss(self, item) -> Tensor:
        tokens, tags = item
        return crf.nll(self.window_emissions(tokens), self.crf_params, list(tags))

    def predict_entities(self, text: str) -> list[EntitySpan]:
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                return self._predict_entities(text)
        finally:
            if was_training:
                self.train()

    def _predict_entities(self, text: str) -> list[EntitySpan]:
        tokens = tokenize_with_offsets(text)
        if not tokens:
            return []
        windows = text_windows(tokens, self.cfg.max_len, self.cfg.window_stride)
        paths = []
        for lo, hi in windows:
            em = self.window_emissions(tokens[lo:hi])
            path, _ = crf.viterbi(em, self.crf_params)
            paths.append(path)
        # each token takes its tag from the window where it sits most centrally
        tags = []
        for i in range(len(tokens)):
            w = owning_chunk(i, windows)
            tags.append(paths[w][i - windows[w][0]])
        spans = from_bio(TagSequence(tuple(tokens), tuple(tags)))
        return [
            EntitySpan(s.start_char, s.end_char, s.label, text[s.start_char:s.end_char])
            for s in spans
        ]


# ---------------------------------------------------------------------------
# baseline: span-boundary classification
# ---------------------------------------------------------------------------

class SpanBoundaryTagger(nn.Module):
    """[start-token; end-token; width] span representations, linear head."""

    def __init__(self, cfg: SpanNerConfig):
        super().__init__()
        if cfg.kind != "span_boundary":
            raise ConfigError("config kind must be 'span_boundary'")
        self.cfg = cfg
        self.none_index = cfg.num_entity_labels
        self.backend = get_backend(cfg.backend, trainable=cfg.encoder_trainable)
        self.width_emb = nn.Embedding(cfg.max_span_width, cfg.width_dim)
        self.head = nn.Linear(2 * self.backend.dim + cfg.width_dim, cfg.num_entity_labels + 1)
        self._vec_cache: dict[tuple[str, ...], Tensor] = {}

    def backend_id(self) -> str:
        return self.backend.backend_id

    def _window_vectors(self, tokens: Sequence[Token]) -> Tensor:
        surfaces = tuple(t.surface for t in tokens)
        if self.cfg.encoder_trainable:
            return encode_tokens(surfaces, self.backend, len(surfaces) + 2).vectors[1:-1]
        vecs = self._vec_cache.get(surfaces)
        if vecs is None:
            vecs = encode_tokens(surfaces, self.backend, len(surfaces) + 2).vectors[1:-1]
            self._vec_cache[surfaces] = vecs
        return vecs

    def span_scores(self, tokens: Sequence[Token], cands: Sequence[SpanCandidate]) -> Tensor:
        vecs = self._window_vectors(tokens)
        starts = torch.as_tensor([c.start for c in cands])
        ends = torch.as_tensor([c.end for c in cands])
        widths = torch.as_tensor([c.width - 1 for c in cands])
        reprs = torch.cat(
            [vecs[starts], vecs[ends], self.width_emb(widths)], dim=-1
        )
        return self.head(reprs)

    def build_training_items(self, prepared: list[WindowGold], rng) -> list:
        items = []
        for win in prepared:
            if not win.spans:
                continue
            n = len(win.tokens)
            gold_keys = {(s, e) for s, e, _ in win.spans}
            pool = [
                c for c in enumerate_spans(n, min(self.cfg.max_span_width, n))
                if (c.start, c.end) not in gold_keys
            ]
            n_neg = min(len(pool), self.cfg.neg_ratio * len(win.spans))
            negatives = rng.sample(pool, n_neg) if n_neg else []
            slots = [SpanCandidate.of(s, e) for s, e, _ in win.spans] + negatives
            labels = [lab for _, _, lab in win.spans] + [self.none_index] * len(negatives)
            items.append((win.tokens, tuple(slots), tuple(labels)))
        return items

    def item_loss(self, item) -> Tensor:
        tokens, slots, labels = item
        scores = self.span_scores(tokens, slots)
        return nn.functional.cross_entropy(
            scores, torch.as_tensor(labels), reduction="sum"
        )

    def predict_entities(self, text: str) -> list[EntitySpan]:
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                return self._predict_entities(text)
        finally:
            if was_training:
                self.train()

    def _predict_entities(self, text: str) -> list[EntitySpan]:
        tokens = tokenize_with_offsets(text)
        if not tokens:
            return []
        pooled: list[tuple[int, int, int, float]] = []
        for lo, hi in text_windows(tokens, self.cfg.max_len, self.cfg.window_stride):
            wtoks = tokens[lo:hi]
            cands = enumerate_spans(len(wtoks), min(self.cfg.max_span_width, len(wtoks)))
            scores = self.span_scores(wtoks, cands).detach().cpu().double().numpy()
            probs = _softmax_rows(scores)
            for cand, score_row, prob_row in zip(cands, scores, probs):
                label = argmax_label(score_row, self.none_index)
                if label == self.none_index:
                    continue
                pooled.append((
                    wtoks[cand.start].start_char,
                    wtoks[cand.end].end_char,
                    label,
                    float(prob_row[label]),
                ))
        kept = resolve_overlaps(pooled, none_index=None)
        return [EntitySpan(s, e, lab, text[s:e]) for s, e, lab in kept]


def build_ner_model(cfg: SpanNerConfig) -> nn.Module:
    if cfg.kind == "entity_aware":
        return EntityAwareSpanClassifier(cfg)
    if cfg.kind == "token_crf":
        return TokenCrfTagger(cfg)
    return SpanBoundaryTagger(cfg)


# ---------------------------------------------------------------------------
# training adapter
# ---------------------------------------------------------------------------

@dataclass
class NerTrainingTask:
    """Window preparation is cached per example; negatives resample per epoch."""

    model: nn.Module
    labels: LabelSet
    _prepared: dict[int, tuple[NerExample, list[WindowGold]]] = field(default_factory=dict)

    def _windows(self, example: NerExample) -> list[WindowGold]:
        hit = self._prepared.get(id(example))
        if hit is None:
            hit = (example, window_gold(example, self.model.cfg))
            self._prepared[id(example)] = hit
        return hit[1]

    def make_batches(self, examples: Sequence[NerExample], batch_size: int, rng) -> list[list]:
        prepared = [w for ex in examples for w in self._windows(ex)]
        items = self.model.build_training_items(prepared, rng)
        rng.shuffle(items)
        return [items[i:i + batch_size] for i in range(0, len(items), batch_size)]

    def batch_loss(self, batch: list) -> Tensor:
        total = None
        for item in batch:
            term = self.model.item_loss(item)
            total = term if total is None else total + term
        return total

    def evaluate(self, examples: Sequence[NerExample]) -> float:
        """Strict span F1 of predicted entities against gold."""
        from .evaluation import span_f1

        gold = [
            (ex.doc_id, e.start_char, e.end_char, e.label)
            for ex in examples
            for e in ex.entities
        ]
        pred = [
            (ex.doc_id, e.start_char, e.end_char, e.label)
            for ex in examples
            for e in self.model.predict_entities(ex.text)
        ]
        return span_f1(gold, pred).f1

    def encoder_parameters(self) -> Iterable[nn.Parameter]:
        backend = getattr(self.model, "backend", None)
        if backend is None:
            return ()
        module = backend.trainable_module()
        return module.parameters() if module is not None else ()

    def checkpoint_meta(self) -> dict:
        return {
            "task": "ner",
            "model_config": asdict(self.model.cfg),
            "labels": list(self.labels.names),
            "label_kind": self.labels.kind,
            "backend": self.model.backend_id(),
        }
