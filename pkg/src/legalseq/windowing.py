"""Overlapping-window coverage of long sequences with deterministic ownership."""

from __future__ import annotations

from typing import Sequence


def chunk_ranges(n: int, size: int, overlap: int) -> list[tuple[int, int]]:
    """Cover [0, n) with half-open windows of ``size`` overlapping by ``overlap``."""
    if size <= overlap:
        raise ValueError(f"window size {size} must exceed overlap {overlap}")
    if n <= size:
        return [(0, max(n, 0))]
    stride = size - overlap
    ranges = []
    start = 0
    while True:
        end = min(start + size, n)
        ranges.append((start, end))
        if end == n:
            return ranges
        start += stride


def owning_chunk(i: int, ranges: Sequence[tuple[int, int]]) -> int:
    """Index of the covering window whose center is nearest to i (ties: earlier)."""
    best, best_dist = 0, float("inf")
    for c, (lo, hi) in enumerate(ranges):
        if not lo <= i < hi:
            continue
        dist = abs(i - (lo + hi - 1) / 2.0)
        if dist < best_dist:
            best, best_dist = c, dist
    return best
