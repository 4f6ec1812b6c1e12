"""Training harness: seeding, AdamW, warm-up/decay schedule, checkpointing.

The optimizer is decoupled-weight-decay Adam (torch's AdamW): weight decay
acts on the weights directly, not through the gradient moments. The
learning rate rises linearly from zero over the warm-up fraction of total
steps, then decays linearly to zero. One validation pass per epoch; a
checkpoint is written whenever the validation metric strictly improves,
so the saved sequence is strictly increasing in metric.

Runs are deterministic under a fixed seed with a deterministic encoder
backend: the history CSV of two identical runs is byte-identical. Wall
times are logged to stderr only, never written into result files.
"""

from __future__ import annotations

import csv
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .errors import ConfigError, TrainingAborted

log = logging.getLogger("legalseq.train")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 10
    peak_lr: float = 1e-4
    encoder_lr: float | None = None
    warmup_ratio: float = 0.0
    weight_decay: float = 0.01
    seed: int = 42
    grad_clip_norm: float | None = 1.0
    early_stop_metric: float | None = None
    deterministic: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    lr: float
    wall_time: float  # seconds; logged, never exported


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")

    def to_csv(self, path: str | Path) -> None:
        """Epoch rows without wall times, so identical runs serialize identically."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_metric", "lr"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_metric), repr(r.lr)])


class TrainableTask(Protocol):
    model: nn.Module

    def make_batches(self, data, batch_size: int, rng: random.Random) -> list: ...
    def batch_loss(self, batch) -> Tensor: ...
    def evaluate(self, data) -> float: ...
    def encoder_parameters(self): ...
    def checkpoint_meta(self) -> dict: ...


def set_seed(seed: int) -> None:
    """Seed every stochastic component used by the toolkit."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Piecewise-linear schedule: warm-up to peak, then decay to zero.

    Warm-up spans ceil(warmup_ratio * total_steps) steps; the value is
    peak_lr exactly at the warm-up boundary and 0 at total_steps.
    """
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warmup_steps = min(math.ceil(cfg.warmup_ratio * total_steps), total_steps - 1)
    if warmup_steps > 0 and step < warmup_steps:
        return cfg.peak_lr * step / warmup_steps
    return cfg.peak_lr * (total_steps - step) / (total_steps - warmup_steps)


def save_checkpoint(path: str | Path, task: TrainableTask, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        **task.checkpoint_meta(),
        "state": task.model.state_dict(),
    }
    if extra:
        payload.update(extra)
    try:
        torch.save(payload, path)
    except OSError as e:
        raise TrainingAborted(f"cannot write checkpoint {path}: {e}") from e


def train(
    task: TrainableTask,
    train_data: Sequence,
    val_data: Sequence,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[Path | None, TrainHistory]:
    """Run the epoch loop; returns the best checkpoint path and the history.

    The history CSV (when ``out_dir`` is given) is rewritten after every
    epoch, so an aborted run still leaves its partial history on disk.
    """
    set_seed(cfg.seed)
    if cfg.deterministic:
        torch.set_num_threads(1)
    out_path = Path(out_dir) if out_dir is not None else None
    ckpt_path = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_path / "checkpoint.pt"

    param_groups = _param_groups(task, cfg)
    optimizer = torch.optim.AdamW(param_groups, lr=cfg.peak_lr, weight_decay=cfg.weight_decay)

    epoch_rng = random.Random(cfg.seed)
    n_batches = max(1, len(task.make_batches(train_data, cfg.batch_size, random.Random(cfg.seed))))
    total_steps = cfg.epochs * n_batches

    history = TrainHistory()
    step = 0
    best_path: Path | None = None
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        task.model.train()
        batches = task.make_batches(train_data, cfg.batch_size, epoch_rng)
        epoch_loss = 0.0
        last_lr = 0.0
        for b, batch in enumerate(batches):
            lr = lr_at(step, total_steps, cfg)
            last_lr = lr
            for g in optimizer.param_groups:
                g["lr"] = lr * g["lr_scale"]
            optimizer.zero_grad()
            loss = task.batch_loss(batch)
            loss_val = float(loss.detach())
            if not math.isfinite(loss_val):
                _persist_history(history, out_path)
                raise TrainingAborted(
                    f"non-finite loss {loss_val} in epoch {epoch}, batch {b}"
                )
            loss.backward()
            if cfg.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(
                    (p for g in optimizer.param_groups for p in g["params"]),
                    cfg.grad_clip_norm,
                )
            optimizer.step()
            epoch_loss += loss_val
            step += 1

        val_metric = float(task.evaluate(val_data))
        wall = time.monotonic() - t0
        history.records.append(
            EpochRecord(epoch, epoch_loss, val_metric, last_lr, wall)
        )
        log.info(
            "epoch %d: loss=%.6f val=%.6f lr=%.3g wall=%.2fs",
            epoch, epoch_loss, val_metric, last_lr, wall,
        )
        if val_metric > history.best_metric:
            history.best_metric = val_metric
            history.best_epoch = epoch
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, task, extra={
                    "best_metric": val_metric, "best_epoch": epoch,
                })
                best_path = ckpt_path
        _persist_history(history, out_path)
        if cfg.early_stop_metric is not None and val_metric >= cfg.early_stop_metric:
            log.info("early stop: metric %.6f reached threshold", val_metric)
            break
    return best_path, history


def _param_groups(task: TrainableTask, cfg: TrainConfig) -> list[dict]:
    encoder_params = list(task.encoder_parameters())
    encoder_ids = {id(p) for p in encoder_params}
    head_params = [p for p in task.model.parameters() if id(p) not in encoder_ids]
    groups = [{"params": head_params, "lr_scale": 1.0}]
    if encoder_params:
        scale = (cfg.encoder_lr / cfg.peak_lr) if cfg.encoder_lr is not None else 1.0
        groups.append({"params": encoder_params, "lr_scale": scale})
    return groups


def _persist_history(history: TrainHistory, out_path: Path | None) -> None:
    if out_path is not None:
        history.to_csv(out_path / "history.csv")


def load_checkpoint(path: str | Path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"checkpoint format version {version!r} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return payload


def config_to_dict(cfg) -> dict:
    return asdict(cfg)
