"""Linear-chain CRF: scoring, log-partition, Viterbi, NLL, and marginals.

All recursions run in log space (log-sum-exp), never probability space,
so label sequences hundreds of positions long with scores up to ~1e4 in
magnitude stay stable. Scoring and the partition function are plain
differentiable torch expressions; Viterbi decoding runs in float64 numpy
with ties broken toward the lowest label index, so decoded paths are
reproducible across runs and platforms.

A sequence y over emissions x scores
    start[y_0] + sum_t x[t, y_t] + sum_t T[y_t, y_{t+1}] + end[y_L]
with explicit start/end boundary vectors (zero-initialized, so the
boundary-free model is the starting point).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor, nn

from .errors import ContractError


class CrfParams(nn.Module):
    """Transition, start, and end scores for a K-label chain."""

    def __init__(self, num_labels: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        if num_labels < 1:
            raise ContractError(f"num_labels must be >= 1, got {num_labels}")
        self.num_labels = num_labels
        self.transitions = nn.Parameter(torch.zeros(num_labels, num_labels, dtype=dtype))
        self.start_scores = nn.Parameter(torch.zeros(num_labels, dtype=dtype))
        self.end_scores = nn.Parameter(torch.zeros(num_labels, dtype=dtype))


def _check_emissions(emissions: Tensor, params: CrfParams) -> None:
    if emissions.dim() != 2:
        raise ContractError(f"emissions must be L x K, got shape {tuple(emissions.shape)}")
    if emissions.shape[0] < 1:
        raise ContractError("emissions must cover at least one position")
    if emissions.shape[1] != params.num_labels:
        raise ContractError(
            f"emissions have {emissions.shape[1]} labels, params have {params.num_labels}"
        )


def sequence_score(emissions: Tensor, params: CrfParams, labels: list[int] | Tensor) -> Tensor:
    """Unnormalized score of one label sequence."""
    _check_emissions(emissions, params)
    if not torch.is_tensor(labels):
        labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.dim() != 1 or labels.shape[0] != emissions.shape[0]:
        raise ContractError(
            f"labels length {tuple(labels.shape)} does not match emissions length "
            f"{emissions.shape[0]}"
        )
    if labels.min() < 0 or labels.max() >= params.num_labels:
        raise ContractError("label index out of range")
    score = params.start_scores[labels[0]] + params.end_scores[labels[-1]]
    score = score + emissions[torch.arange(emissions.shape[0]), labels].sum()
    if labels.shape[0] > 1:
        score = score + params.transitions[labels[:-1], labels[1:]].sum()
    return score


def log_partition(emissions: Tensor, params: CrfParams) -> Tensor:
    """log sum over all K^L sequences of exp(sequence_score), by forward recursion."""
    _check_emissions(emissions, params)
    alpha = params.start_scores + emissions[0]
    for t in range(1, emissions.shape[0]):
        # alpha[j] + T[j, k] + x[t, k], reduced over j
        alpha = torch.logsumexp(alpha.unsqueeze(1) + params.transitions, dim=0) + emissions[t]
    return torch.logsumexp(alpha + params.end_scores, dim=0)


def viterbi(emissions: Tensor, params: CrfParams) -> tuple[list[int], float]:
    """Argmax label sequence and its score; ties go to the lowest label index."""
    _check_emissions(emissions, params)
    with torch.no_grad():
        em = emissions.detach().cpu().double().numpy()
        trans = params.transitions.detach().cpu().double().numpy()
        start = params.start_scores.detach().cpu().double().numpy()
        end = params.end_scores.detach().cpu().double().numpy()
    L, K = em.shape
    delta = start + em[0]
    backptr = np.zeros((L, K), dtype=np.int64)
    for t in range(1, L):
        cand = delta[:, None] + trans  # cand[j, k]
        backptr[t] = np.argmax(cand, axis=0)  # first max = lowest j on ties
        delta = cand[backptr[t], np.arange(K)] + em[t]
    final = delta + end
    last = int(np.argmax(final))
    path = [last]
    for t in range(L - 1, 0, -1):
        last = int(backptr[t, last])
        path.append(last)
    path.reverse()
    return path, float(final[path[-1]])


def nll(emissions: Tensor, params: CrfParams, gold: list[int] | Tensor) -> Tensor:
    """Negative log-likelihood of the gold sequence; differentiable, >= 0."""
    return log_partition(emissions, params) - sequence_score(emissions, params, gold)


def marginals(emissions: Tensor, params: CrfParams) -> Tensor:
    """Per-position posterior label probabilities by forward-backward."""
    _check_emissions(emissions, params)
    with torch.no_grad():
        L = emissions.shape[0]
        alphas = [params.start_scores + emissions[0]]
        for t in range(1, L):
            alphas.append(
                torch.logsumexp(alphas[-1].unsqueeze(1) + params.transitions, dim=0)
                + emissions[t]
            )
        betas = [torch.zeros_like(params.end_scores) for _ in range(L)]
        betas[L - 1] = params.end_scores.clone()
        for t in range(L - 2, -1, -1):
            betas[t] = torch.logsumexp(
                params.transitions + emissions[t + 1] + betas[t + 1], dim=1
            )
        log_z = torch.logsumexp(alphas[-1] + betas[-1], dim=0)
        rows = [alphas[t] + betas[t] - log_z for t in range(L)]
        return torch.exp(torch.stack(rows))
