"""Token-encoder backends and sentence-pooling strategies.

A backend maps a list of token surfaces to one contextual vector per
token. Two families are provided:

* ``hash<dim>[:<seed>]`` — a deterministic test backend. Each surface is
  expanded to a fixed pseudo-random vector derived from a keyed BLAKE2b
  hash, so outputs are byte-identical across processes and machines with
  zero downloads. The whole desk-scale test suite runs on it.
* ``hf:<name-or-path>`` — pretrained contextual encoders loaded through
  the ``transformers`` library (generic, legal-domain, or multilingual
  weights; the path comes from config, never from code). Reference
  tokens are represented by their first subtoken's vector.

Sequences are wrapped with start/end markers before encoding and
truncation drops tail tokens, never the markers.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .errors import ConfigError, ContractError

START_MARKER = "[CLS]"
END_MARKER = "[SEP]"

CACHE_ENV_VAR = "LEGALSEQ_CACHE"


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    wrapped: bool = False


@dataclass(frozen=True)
class EncoderOutput:
    vectors: Tensor  # m x D
    backend_id: str


class EncoderBackend:
    """One vector per token surface; immutable after construction."""

    backend_id: str
    dim: int

    def encode(self, tokens: Sequence[str]) -> Tensor:
        raise NotImplementedError

    def trainable_module(self) -> nn.Module | None:
        """The underlying module when the encoder can be fine-tuned, else None."""
        return None


class HashBackend(EncoderBackend):
    """Deterministic backend: BLAKE2b-derived vector per surface, cached."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ConfigError(f"hash backend dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self.backend_id = f"hash{dim}" if seed == 0 else f"hash{dim}:{seed}"
        self._cache: dict[str, Tensor] = {}

    def _vector(self, surface: str) -> Tensor:
        vec = self._cache.get(surface)
        if vec is None:
            n_blocks = (self.dim * 4 + 63) // 64
            key = f"{self.seed}".encode()
            blocks = [
                hashlib.blake2b(f"{surface}\x00{i}".encode(), key=key, digest_size=64).digest()
                for i in range(n_blocks)
            ]
            raw = np.frombuffer(b"".join(blocks), dtype="<u4")[: self.dim]
            vec = torch.from_numpy((raw / 2.0**32 * 2.0 - 1.0).astype(np.float32))
            self._cache[surface] = vec
        return vec

    def encode(self, tokens: Sequence[str]) -> Tensor:
        if not tokens:
            raise ContractError("cannot encode an empty token list")
        return torch.stack([self._vector(t) for t in tokens])


class TransformerBackend(EncoderBackend):
    """Pretrained contextual encoder via transformers; first-subtoken mapping."""

    def __init__(self, name_or_path: str, trainable: bool = False, device: str = "cpu"):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:
            raise ConfigError(
                "pretrained encoder backends need the 'transformers' package; "
                "install legalseq[hf]"
            ) from e
        cache_dir = os.environ.get(CACHE_ENV_VAR) or None
        self.tokenizer = AutoTokenizer.from_pretrained(name_or_path, cache_dir=cache_dir)
        self.model = AutoModel.from_pretrained(name_or_path, cache_dir=cache_dir).to(device)
        self.model.eval()
        self.trainable = trainable
        self.device = device
        self.dim = int(self.model.config.hidden_size)
        self.backend_id = f"hf:{name_or_path}"

    def trainable_module(self) -> nn.Module | None:
        return self.model if self.trainable else None

    def encode(self, tokens: Sequence[str]) -> Tensor:
        if not tokens:
            raise ContractError("cannot encode an empty token list")
        words = list(tokens)
        has_markers = len(words) >= 2 and words[0] == START_MARKER and words[-1] == END_MARKER
        if has_markers:
            words = words[1:-1]
        if not words:
            words = [self.tokenizer.unk_token or "."]
        enc = self.tokenizer(
            words,
            is_split_into_words=True,
            return_tensors="pt",
            truncation=True,
            max_length=self.tokenizer.model_max_length,
        ).to(self.device)
        ctx = torch.enable_grad() if self.trainable else torch.no_grad()
        with ctx:
            hidden = self.model(**enc).last_hidden_state[0]
        word_ids = enc.word_ids(0)
        first_sub: dict[int, int] = {}
        for pos, wid in enumerate(word_ids):
            if wid is not None and wid not in first_sub:
                first_sub[wid] = pos
        rows = []
        if has_markers:
            rows.append(hidden[0])  # the model's own sequence-start state
        last_valid = hidden[0]
        for i in range(len(words)):
            if i in first_sub:
                last_valid = hidden[first_sub[i]]
            rows.append(last_valid)  # words truncated away inherit the last state
        if has_markers:
            rows.append(hidden[-1])
        return torch.stack(rows)


_BACKENDS: dict[str, EncoderBackend] = {}


def get_backend(spec: str | EncoderBackend, trainable: bool = False) -> EncoderBackend:
    """Resolve a backend id; instances are cached and shared."""
    if isinstance(spec, EncoderBackend):
        return spec
    key = f"{spec}|trainable={trainable}"
    if key in _BACKENDS:
        return _BACKENDS[key]
    if spec.startswith("hash"):
        body = spec[4:]
        seed = 0
        if ":" in body:
            body, seed_s = body.split(":", 1)
            seed = int(seed_s)
        try:
            dim = int(body) if body else 64
        except ValueError:
            raise ConfigError(f"bad hash backend spec {spec!r}") from None
        backend: EncoderBackend = HashBackend(dim=dim, seed=seed)
    elif spec.startswith("hf:"):
        backend = TransformerBackend(spec[3:], trainable=trainable)
    else:
        raise ConfigError(
            f"unknown encoder backend {spec!r}; expected hash<dim>[:<seed>] or hf:<path>"
        )
    _BACKENDS[key] = backend
    return backend


def wrap_tokens(seq: TokenSequence | Sequence[str]) -> TokenSequence:
    if isinstance(seq, TokenSequence):
        if seq.wrapped:
            return seq
        return TokenSequence((START_MARKER, *seq.tokens, END_MARKER), wrapped=True)
    return TokenSequence((START_MARKER, *tuple(seq), END_MARKER), wrapped=True)


def encode_tokens(
    seq: TokenSequence | Sequence[str],
    backend: str | EncoderBackend,
    max_len: int,
) -> EncoderOutput:
    """Wrap with markers, truncate to ``max_len`` keeping both markers, encode."""
    if max_len < 2:
        raise ContractError(f"max_len must leave room for both markers, got {max_len}")
    backend = get_backend(backend)
    wrapped = wrap_tokens(seq)
    tokens = wrapped.tokens
    if len(tokens) > max_len:
        tokens = (*tokens[: max_len - 1], tokens[-1])
    return EncoderOutput(vectors=backend.encode(tokens), backend_id=backend.backend_id)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

class AttentionPooling(nn.Module):
    """Learned softmax-weighted sum of projected token vectors.

    Scores are u . tanh(W v + b); the pooled vector is the weight-averaged
    projection sum_j alpha_j (W v_j + b). Weights are non-negative, sum to
    one, and are permutation-equivariant in the rows.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, dim)
        self.context = nn.Parameter(torch.empty(dim))
        nn.init.normal_(self.context, std=dim**-0.5)

    def forward(
        self,
        x: Tensor,
        mask: Tensor | None = None,
        return_weights: bool = False,
    ):
        p = self.proj(x)  # (..., m, D)
        scores = torch.tanh(p) @ self.context  # (..., m)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = _order_invariant_softmax(scores)
        pooled = (weights.unsqueeze(-1) * p).sum(dim=-2)
        if return_weights:
            return pooled, weights
        return pooled


def _order_invariant_softmax(scores: Tensor) -> Tensor:
    """Softmax whose normalizer sums exponentials in value order.

    A plain softmax accumulates the denominator in sequence order, so
    permuting the rows can shift the result by one ulp. Summing the
    sorted values instead makes the weights exactly permutation
    equivariant, which downstream determinism checks rely on.
    """
    shifted = scores - scores.max(dim=-1, keepdim=True).values
    ex = torch.exp(shifted)
    denom = torch.sort(ex, dim=-1).values.sum(dim=-1, keepdim=True)
    return ex / denom


@dataclass(frozen=True)
class PoolingStrategy:
    kind: str  # "first_token" | "mean" | "attention"
    attention: AttentionPooling | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("first_token", "mean", "attention"):
            raise ConfigError(f"unknown pooling kind {self.kind!r}")
        if self.kind == "attention" and self.attention is None:
            raise ConfigError("attention pooling needs its module")


def make_pooling(kind: str, dim: int | None = None) -> PoolingStrategy:
    if kind == "attention":
        if dim is None:
            raise ConfigError("attention pooling needs the vector dimension")
        return PoolingStrategy(kind, AttentionPooling(dim))
    return PoolingStrategy(kind)


def pool(output: EncoderOutput | Tensor, strategy: PoolingStrategy) -> Tensor:
    """Reduce per-token vectors to one sentence vector."""
    vectors = output.vectors if isinstance(output, EncoderOutput) else output
    if vectors.shape[-2] < 1:
        raise ContractError("cannot pool an empty output")
    if strategy.kind == "first_token":
        return vectors[..., 0, :]
    if strategy.kind == "mean":
        return vectors.mean(dim=-2)
    return strategy.attention(vectors)
