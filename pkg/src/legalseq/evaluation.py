"""Evaluation metrics and report emission.

Micro F1 pools true/false positive and negative counts across classes;
for single-label-per-item classification it equals accuracy. Span F1 is
strict: a predicted span counts only when document, offsets, and label
all match a gold span exactly. Reports are CSV-first so every figure is
diffable without image comparison; PNG figures are conveniences rendered
from the same data.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CorpusStats, LabelSet
from .errors import ContractError

SpanKey = tuple[str, int, int, int]  # (doc_id, start_char, end_char, label)


@dataclass(frozen=True)
class SpanMatchReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float


@dataclass
class ConfusionMatrix:
    """Counts with rows = gold and columns = predicted."""

    matrix: np.ndarray
    label_names: tuple[str, ...]

    def row_normalized(self) -> np.ndarray:
        totals = self.matrix.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(totals > 0, self.matrix / totals, 0.0)
        return out

    def total(self) -> int:
        return int(self.matrix.sum())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["gold\\pred", *self.label_names])
            for name, row in zip(self.label_names, self.matrix):
                w.writerow([name, *(int(v) for v in row)])


def micro_f1(gold: Sequence[int], pred: Sequence[int], exclude: int | None = None) -> float:
    """Pooled-count F1 over all classes; equals accuracy for single-label items.

    ``exclude`` drops one class from the pooled counts entirely (some
    scorers leave a catch-all class out); default keeps every class.
    """
    if len(gold) != len(pred):
        raise ContractError(f"gold/pred length mismatch: {len(gold)} vs {len(pred)}")
    classes = set(gold) | set(pred)
    if exclude is not None:
        classes.discard(exclude)
    tp = fp = fn = 0
    for c in classes:
        for g, p in zip(gold, pred):
            if g == c and p == c:
                tp += 1
            elif p == c:
                fp += 1
            elif g == c:
                fn += 1
    denom = 2 * tp + fp + fn
    return (2 * tp / denom) if denom else 0.0


def span_f1(gold: Iterable[SpanKey], pred: Iterable[SpanKey]) -> SpanMatchReport:
    """Strict span match on (doc, start, end, label)."""
    gold_set = set(gold)
    pred_set = set(pred)
    tp = len(gold_set & pred_set)
    fp = len(pred_set - gold_set)
    fn = len(gold_set - pred_set)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SpanMatchReport(tp, fp, fn, precision, recall, f1)


def confusion(gold: Sequence[int], pred: Sequence[int], labels: LabelSet) -> ConfusionMatrix:
    if len(gold) != len(pred):
        raise ContractError(f"gold/pred length mismatch: {len(gold)} vs {len(pred)}")
    k = len(labels)
    matrix = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gold, pred):
        matrix[g, p] += 1
    return ConfusionMatrix(matrix=matrix, label_names=tuple(labels.names))


def micro_f1_from_confusion(cm: ConfusionMatrix) -> float:
    tp = int(np.trace(cm.matrix))
    fp = int(cm.matrix.sum() - np.trace(cm.matrix))
    denom = 2 * tp + fp + fp  # off-diagonal counts are both FP and FN once each
    return (2 * tp / denom) if denom else 0.0


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def emit_report(
    out_dir: str | Path,
    history=None,
    conf: ConfusionMatrix | None = None,
    stats: CorpusStats | None = None,
    metrics: dict[str, float] | None = None,
    hyper_grid: Sequence[dict] | None = None,
    figures: bool = True,
) -> list[Path]:
    """Write the CSV/figure bundle; returns the list of files written.

    Layout: metrics.csv, confusion.csv, history.csv, class_distribution.csv,
    sentence_lengths.csv, hyper_grid.csv, figures/*.png. Every figure has a
    CSV twin; absent inputs produce header-only files where the schema is
    fixed and are skipped otherwise.
    """
    out = Path(out_dir)
    fig_dir = out / "figures"
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if metrics is not None:
        path = out / "metrics.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["metric", "value"])
            for name, value in metrics.items():
                w.writerow([name, repr(float(value))])
        written.append(path)

    if history is not None:
        path = out / "history.csv"
        history.to_csv(path)
        written.append(path)
        if figures and history.records:
            written.append(_plot_history(history, fig_dir))

    if conf is not None:
        path = out / "confusion.csv"
        conf.to_csv(path)
        written.append(path)
        if figures:
            written.append(_plot_confusion(conf, fig_dir))

    if stats is not None:
        path = out / "class_distribution.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["label", "count"])
            for name, count in stats.class_counts.items():
                w.writerow([name, count])
        written.append(path)
        path = out / "sentence_lengths.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["token_count", "frequency"])
            for bucket, freq in stats.sentence_length_histogram.items():
                w.writerow([bucket, freq])
        written.append(path)
        if figures:
            written.extend(_plot_stats(stats, fig_dir))

    if hyper_grid is not None:
        path = out / "hyper_grid.csv"
        keys = sorted({k for row in hyper_grid for k in row})
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(keys)
            for row in hyper_grid:
                w.writerow([row.get(k, "") for k in keys])
        written.append(path)

    return written


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def _plot_history(history, fig_dir: Path) -> Path:
    plt = _pyplot()
    fig_dir.mkdir(parents=True, exist_ok=True)
    epochs = [r.epoch for r in history.records]
    best = []
    cur = float("-inf")
    for r in history.records:
        cur = max(cur, r.val_metric)
        best.append(cur)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.val_metric for r in history.records], marker="o", label="validation")
    ax.plot(epochs, best, linestyle="--", label="best so far")
    ax.set_xlabel("epoch")
    ax.set_ylabel("metric")
    ax.legend()
    fig.tight_layout()
    path = fig_dir / "metric_vs_epoch.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def _plot_confusion(conf: ConfusionMatrix, fig_dir: Path) -> Path:
    plt = _pyplot()
    fig_dir.mkdir(parents=True, exist_ok=True)
    norm = conf.row_normalized()
    k = len(conf.label_names)
    fig, ax = plt.subplots(figsize=(max(6, k * 0.6), max(5, k * 0.5)))
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(k), conf.label_names, rotation=90, fontsize=7)
    ax.set_yticks(range(k), conf.label_names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = fig_dir / "confusion.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def _plot_stats(stats: CorpusStats, fig_dir: Path) -> list[Path]:
    plt = _pyplot()
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    buckets = list(stats.sentence_length_histogram)
    freqs = [stats.sentence_length_histogram[b] for b in buckets]
    ax.bar(buckets, freqs, width=1.0)
    ax.set_xlabel("sentence length (tokens)")
    ax.set_ylabel("frequency")
    fig.tight_layout()
    path = fig_dir / "sentence_lengths.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(max(6, len(stats.class_counts) * 0.5), 4))
    names = list(stats.class_counts)
    counts = [stats.class_counts[n] for n in names]
    ax.bar(range(len(names)), counts)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("count")
    fig.tight_layout()
    path = fig_dir / "class_distribution.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written
