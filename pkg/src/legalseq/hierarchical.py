"""Rhetorical-role models over whole documents.

``HierarchicalSentenceClassifier`` is the document-context model: token
encoder -> word-level Bi-LSTM -> attention pooling -> sentence-level
Bi-LSTM -> linear -> linear-chain CRF over the document's sentence
sequence. Each sentence's label therefore depends on every other
sentence in the document. Dropout sits after each layer boundary and is
active only in training mode.

``IndependentSentenceClassifier`` is the no-context baseline family: a
pooled sentence vector (first-token or mean) through a one-hidden-layer
perceptron, one sentence at a time.

Documents are processed as whole sentence sequences. Beyond
``max_doc_sentences`` they are split into overlapping chunks and each
sentence takes its prediction from the chunk where it sits most
centrally; sentence labels are never dropped.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from . import crf
from .corpus import Document, LabelSet, tokenize_with_offsets
from .encoder import (
    AttentionPooling,
    EncoderOutput,
    PoolingStrategy,
    encode_tokens,
    get_backend,
    make_pooling,
    pool,
)
from .errors import ConfigError, ContractError
from .windowing import chunk_ranges, owning_chunk


@dataclass
class RoleModelConfig:
    kind: str = "hierarchical"  # "hierarchical" | "independent"
    num_labels: int = 13
    backend: str = "hash64"
    max_sentence_len: int = 32
    word_rnn_hidden: int = 128
    sent_rnn_hidden: int = 128
    dropout: float = 0.5
    pooling: str = "attention"  # independent baselines: "first_token" | "mean"
    mlp_hidden: int = 128
    encoder_trainable: bool = False
    max_doc_sentences: int = 512
    chunk_overlap: int = 64

    def __post_init__(self) -> None:
        if self.kind not in ("hierarchical", "independent"):
            raise ConfigError(f"unknown role-model kind {self.kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_doc_sentences <= self.chunk_overlap:
            raise ConfigError("chunk overlap must be smaller than the chunk size")


def _sentence_tokens(doc: Document) -> list[list[str]]:
    return [[t.surface for t in tokenize_with_offsets(s.surface)] for s in doc.sentences]


class HierarchicalSentenceClassifier(nn.Module):
    """Word -> sentence -> document hierarchy with a CRF output layer."""

    def __init__(self, cfg: RoleModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        if cfg.kind != "hierarchical":
            raise ConfigError("config kind must be 'hierarchical'")
        self.cfg = cfg
        self.backend = get_backend(cfg.backend, trainable=cfg.encoder_trainable)
        d = self.backend.dim
        self.word_rnn = nn.LSTM(
            d, cfg.word_rnn_hidden, batch_first=True, bidirectional=True
        )
        self.pooling = AttentionPooling(2 * cfg.word_rnn_hidden)
        self.sent_rnn = nn.LSTM(
            2 * cfg.word_rnn_hidden, cfg.sent_rnn_hidden, batch_first=True, bidirectional=True
        )
        self.out = nn.Linear(2 * cfg.sent_rnn_hidden, cfg.num_labels)
        self.crf_params = crf.CrfParams(cfg.num_labels)
        self.dropout = nn.Dropout(cfg.dropout)
        if dtype != torch.float32:
            self.to(dtype)
        self._dtype = dtype

    # -- single-sentence operations ------------------------------------------

    def enrich_tokens(self, encoded: EncoderOutput | Tensor) -> Tensor:
        """Bi-LSTM over one sentence's token vectors; rows are [fwd_t ; bwd_t]."""
        x = encoded.vectors if isinstance(encoded, EncoderOutput) else encoded
        if x.dim() != 2 or x.shape[0] < 1:
            raise ContractError(f"expected m x D token vectors, got {tuple(x.shape)}")
        out, _ = self.word_rnn(x.to(self._dtype).unsqueeze(0))
        return self.dropout(out[0])

    def embed_sentence(self, augmented: Tensor, pooling: PoolingStrategy | None = None) -> Tensor:
        if pooling is None:
            pooled = self.pooling(augmented)
        else:
            pooled = pool(augmented, pooling)
        return self.dropout(pooled)

    def contextualize_sentences(self, sentence_embeddings: Tensor) -> Tensor:
        """Bi-LSTM over the document's sentence sequence; row i sees all sentences."""
        if sentence_embeddings.dim() != 2 or sentence_embeddings.shape[0] < 1:
            raise ContractError(
                f"expected S x E sentence embeddings, got {tuple(sentence_embeddings.shape)}"
            )
        out, _ = self.sent_rnn(sentence_embeddings.unsqueeze(0))
        return self.dropout(out[0])

    # -- document pipeline -----------------------------------------------------

    def encode_document(self, doc: Document) -> list[Tensor]:
        """Token vectors per sentence via the configured backend (marker-wrapped)."""
        return [
            encode_tokens(toks, self.backend, self.cfg.max_sentence_len).vectors.to(self._dtype)
            for toks in _sentence_tokens(doc)
        ]

    def _emissions_whole(self, token_vectors: Sequence[Tensor]) -> Tensor:
        lengths = torch.as_tensor([v.shape[0] for v in token_vectors])
        padded = nn.utils.rnn.pad_sequence(list(token_vectors), batch_first=True)
        padded = self.dropout(padded)
        packed = nn.utils.rnn.pack_padded_sequence(
            padded, lengths, batch_first=True, enforce_sorted=False
        )
        out, _ = self.word_rnn(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True)
        out = self.dropout(out)
        mask = torch.arange(out.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
        pooled = self.dropout(self.pooling(out, mask=mask))
        ctx = self.contextualize_sentences(pooled)
        return self.out(ctx)

    def emissions_from_vectors(self, token_vectors: Sequence[Tensor]) -> Tensor:
        """One emission row per sentence; long documents processed in chunks."""
        n = len(token_vectors)
        if n == 0:
            raise ContractError("document has no sentences")
        ranges = chunk_ranges(n, self.cfg.max_doc_sentences, self.cfg.chunk_overlap)
        if len(ranges) == 1:
            return self._emissions_whole(token_vectors)
        chunk_em = [self._emissions_whole(token_vectors[lo:hi]) for lo, hi in ranges]
        rows = []
        for i in range(n):
            c = owning_chunk(i, ranges)
            rows.append(chunk_em[c][i - ranges[c][0]])
        return torch.stack(rows)

    def emissions(self, doc: Document) -> Tensor:
        return self.emissions_from_vectors(self.encode_document(doc))

    def document_nll(self, token_vectors: Sequence[Tensor], labels: Sequence[int]) -> Tensor:
        """CRF negative log-likelihood of the document's gold label sequence."""
        if len(labels) != len(token_vectors):
            raise ContractError("one gold label per sentence is required")
        n = len(token_vectors)
        ranges = chunk_ranges(n, self.cfg.max_doc_sentences, self.cfg.chunk_overlap)
        total = None
        for lo, hi in ranges:
            em = self._emissions_whole(token_vectors[lo:hi])
            term = crf.nll(em, self.crf_params, list(labels[lo:hi]))
            total = term if total is None else total + term
        return total

    def predict_from_vectors(self, token_vectors: Sequence[Tensor]) -> list[int]:
        n = len(token_vectors)
        ranges = chunk_ranges(n, self.cfg.max_doc_sentences, self.cfg.chunk_overlap)
        chunk_paths = []
        with torch.no_grad():
            for lo, hi in ranges:
                em = self._emissions_whole(token_vectors[lo:hi])
                path, _ = crf.viterbi(em, self.crf_params)
                chunk_paths.append(path)
        labels = []
        for i in range(n):
            c = owning_chunk(i, ranges)
            labels.append(chunk_paths[c][i - ranges[c][0]])
        return labels

    def predict_document(self, doc: Document) -> list[int]:
        """Viterbi-decoded label per sentence, in document order."""
        was_training = self.training
        self.eval()
        try:
            return self.predict_from_vectors(self.encode_document(doc))
        finally:
            if was_training:
                self.train()


class IndependentSentenceClassifier(nn.Module):
    """Sentence-at-a-time baseline: pooled vector through a small perceptron."""

    def __init__(self, cfg: RoleModelConfig):
        super().__init__()
        if cfg.kind != "independent":
            raise ConfigError("config kind must be 'independent'")
        if cfg.pooling not in ("first_token", "mean"):
            raise ConfigError(
                f"independent baseline pools by first_token or mean, got {cfg.pooling!r}"
            )
        self.cfg = cfg
        self.backend = get_backend(cfg.backend, trainable=cfg.encoder_trainable)
        self.strategy = make_pooling(cfg.pooling)
        self.head = nn.Sequential(
            nn.Linear(self.backend.dim, cfg.mlp_hidden),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.mlp_hidden, cfg.num_labels),
        )

    def encode_document(self, doc: Document) -> list[Tensor]:
        return [
            encode_tokens(toks, self.backend, self.cfg.max_sentence_len).vectors
            for toks in _sentence_tokens(doc)
        ]

    def logits_from_vectors(self, token_vectors: Sequence[Tensor]) -> Tensor:
        pooled = torch.stack(
            [pool(v, self.strategy) for v in token_vectors]
        )
        return self.head(pooled)

    def document_nll(self, token_vectors: Sequence[Tensor], labels: Sequence[int]) -> Tensor:
        logits = self.logits_from_vectors(token_vectors)
        return nn.functional.cross_entropy(
            logits, torch.as_tensor(list(labels)), reduction="sum"
        )

    def predict_from_vectors(self, token_vectors: Sequence[Tensor]) -> list[int]:
        with torch.no_grad():
            logits = self.logits_from_vectors(token_vectors).cpu().double().numpy()
        return [int(np.argmax(row)) for row in logits]  # ties go to the lowest index

    def predict_document(self, doc: Document) -> list[int]:
        was_training = self.training
        self.eval()
        try:
            return self.predict_from_vectors(self.encode_document(doc))
        finally:
            if was_training:
                self.train()

    def classify_sentence(self, tokens: Sequence[str]) -> int:
        vec = encode_tokens(tokens, self.backend, self.cfg.max_sentence_len).vectors
        return self.predict_from_vectors([vec])[0]


def build_role_model(cfg: RoleModelConfig) -> nn.Module:
    if cfg.kind == "hierarchical":
        return HierarchicalSentenceClassifier(cfg)
    return IndependentSentenceClassifier(cfg)


# ---------------------------------------------------------------------------
# training adapter
# ---------------------------------------------------------------------------

@dataclass
class RoleTrainingTask:
    """Feeds whole documents to the harness; a batch is a set of documents.

    With a frozen encoder the per-sentence token vectors are computed once
    per document and cached; a trainable encoder re-encodes every batch.
    """

    model: nn.Module
    labels: LabelSet
    _cache: dict[int, tuple[Document, list[Tensor]]] = field(default_factory=dict)

    def _vectors(self, doc: Document) -> list[Tensor]:
        if self.model.cfg.encoder_trainable:
            return self.model.encode_document(doc)
        hit = self._cache.get(id(doc))
        if hit is None:
            hit = (doc, self.model.encode_document(doc))
            self._cache[id(doc)] = hit
        return hit[1]

    def _gold(self, doc: Document) -> list[int]:
        gold = doc.labels
        if any(l is None for l in gold):
            raise ContractError(f"doc {doc.doc_id!r} has unlabeled sentences")
        return gold

    def make_batches(self, docs: Sequence[Document], batch_size: int, rng) -> list[list[Document]]:
        order = list(docs)
        rng.shuffle(order)
        return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    def batch_loss(self, batch: list[Document]) -> Tensor:
        total = None
        for doc in batch:
            term = self.model.document_nll(self._vectors(doc), self._gold(doc))
            total = term if total is None else total + term
        return total

    def evaluate(self, docs: Sequence[Document]) -> float:
        """Micro F1 over all sentences of all documents (equals accuracy here)."""
        from .evaluation import micro_f1

        was_training = self.model.training
        self.model.eval()
        try:
            gold: list[int] = []
            pred: list[int] = []
            for doc in docs:
                gold.extend(self._gold(doc))
                pred.extend(self.model.predict_from_vectors(self._vectors(doc)))
            return micro_f1(gold, pred)
        finally:
            if was_training:
                self.model.train()

    def encoder_parameters(self) -> Iterable[nn.Parameter]:
        module = self.model.backend.trainable_module()
        return module.parameters() if module is not None else ()

    def checkpoint_meta(self) -> dict:
        return {
            "task": "rr",
            "model_config": asdict(self.model.cfg),
            "labels": list(self.labels.names),
            "label_kind": self.labels.kind,
            "backend": self.model.backend.backend_id,
        }
