"""Denoiser training: full pretraining of a base model or adapter fine-tuning."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffusion as D
from .errors import ConfigError, NumericalError
from .optim import Adam, cosine_with_warmup


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 50
    cycles: float = 0.5
    max_steps: int = 4000
    batch_size: int = 8
    seed: int = 0
    fg_weight: float = D.FG_WEIGHT
    bg_weight: float = D.BG_WEIGHT
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.max_steps < 1 or self.batch_size < 1:
            raise ConfigError("max_steps and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def smooth(values, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _clip_grads(params, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


def fit(model, images, masks, labels, cfg: TrainConfig, sched: D.NoiseSchedule | None = None,
        log_path: str | Path | None = None, callback=None) -> list[float]:
    """Train every parameter of ``model`` that requires grad; returns the per-step losses.

    ``images`` are ``[N, H, W]`` in ``[0, 1]``. Batches are drawn with
    replacement from a generator seeded by ``cfg.seed``.
    """
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ConfigError("empty training set")
    sched = sched or D.make_schedule()
    params = model.trainable_parameters()
    if not params:
        raise ConfigError("model has no trainable parameters")
    opt = Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    rng = np.random.default_rng(cfg.seed)
    x0_all = D.to_model_range(images)
    losses = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
    try:
        for step in range(cfg.max_steps):
            idx = rng.integers(0, len(images), size=cfg.batch_size)
            lr = cfg.lr * cosine_with_warmup(step, cfg.warmup_steps, cfg.max_steps, cfg.cycles)
            opt.zero_grad()
            loss = D.training_loss(model, x0_all[idx], masks[idx], labels[idx], sched, rng,
                                   cfg.fg_weight, cfg.bg_weight)
            val = loss.item()
            if not math.isfinite(val):
                raise NumericalError(f"non-finite loss at step {step}")
            loss.backward()
            _clip_grads(params, cfg.grad_clip)
            opt.step(lr)
            losses.append(val)
            if writer is not None:
                writer.writerow([step, repr(val), repr(lr)])
            if callback is not None:
                callback(step, val)
    finally:
        if fh is not None:
            fh.close()
    return losses
