"""DDPM noise schedule, forward corruption, mask-weighted loss and ancestral sampling.

Images live in ``[0, 1]`` outside this module and are mapped to ``[-1, 1]``
for the diffusion math.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

FG_WEIGHT = 2.0
BG_WEIGHT = 1.0


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return self.beta.shape[0]


def make_schedule(T_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule."""
    if T_steps < 1 or not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"invalid schedule T={T_steps}, beta {beta_start}->{beta_end}")
    beta = np.linspace(beta_start, beta_end, T_steps) if T_steps > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    for arr in (beta, alpha):
        arr.setflags(write=False)
    alpha_bar = np.cumprod(alpha)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar)


def to_model_range(img01: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(img01, dtype=np.float64) - 1.0


def from_model_range(x: np.ndarray) -> np.ndarray:
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`` (``t`` scalar or per-batch)."""
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.T):
        raise ConfigError(f"timestep out of range [0, {sched.T}): {t}")
    ab = sched.alpha_bar[t]
    x0 = np.asarray(x0, dtype=np.float64)
    ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim)) if ab.ndim else ab
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps)


def weighted_mse(pred: Tensor, target, mask, fg_weight: float = FG_WEIGHT,
                 bg_weight: float = BG_WEIGHT) -> Tensor:
    """Per-pixel weighted squared error normalised by the total weight."""
    w = np.where(np.asarray(mask) > 0.5, fg_weight, bg_weight)
    diff = pred - np.asarray(target)
    return T.tsum(diff * diff * w) * (1.0 / w.sum())


def training_loss(model, x0, mask, class_id, sched: NoiseSchedule, rng: np.random.Generator,
                  fg_weight: float = FG_WEIGHT, bg_weight: float = BG_WEIGHT) -> Tensor:
    """Mask-weighted epsilon-prediction loss on a batch.

    ``x0`` is in model range ``[-1, 1]`` with shape ``[B, H, W]``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    b = x0.shape[0]
    t = rng.integers(0, sched.T, size=b)
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(x0, t, eps, sched)
    pred = model(x_t, mask, class_id, t)
    return weighted_mse(pred, eps, mask, fg_weight, bg_weight)


def predict_x0(x_t, eps_hat, ab) -> np.ndarray:
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def posterior_mean(x_t, x0_hat, ab_t: float, ab_prev: float) -> np.ndarray:
    """Mean of q(x_prev | x_t, x0) for a (possibly strided) step ``t -> prev``."""
    beta = 1.0 - ab_t / ab_prev
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
    ct = np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t)
    return c0 * x0_hat + ct * x_t


def timestep_subset(sched: NoiseSchedule, stride: int = 1) -> np.ndarray:
    """Descending timesteps ``T-1, T-1-stride, ...`` down to (and including) 0."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    ts = np.arange(sched.T - 1, -1, -stride)
    if ts[-1] != 0:
        ts = np.append(ts, 0)
    return ts


def sample(model, mask, class_id, sched: NoiseSchedule, seed: int, stride: int = 20,
           clip_x0: bool = True) -> np.ndarray:
    """Ancestral DDPM sampling; returns images in ``[0, 1]``.

    ``mask`` is ``[H, W]`` or ``[B, H, W]``; with ``stride > 1`` the chain
    visits every ``stride``-th timestep and uses the respaced betas
    ``1 - abar_t / abar_prev`` with reverse variance fixed to that beta.
    """
    mask = np.asarray(mask, dtype=np.float64)
    single = mask.ndim == 2
    if single:
        mask = mask[None]
    b = mask.shape[0]
    class_id = np.broadcast_to(np.asarray(class_id, dtype=np.int64), (b,))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(mask.shape)
    ts = timestep_subset(sched, stride)
    with T.no_grad():
        for i, t in enumerate(ts):
            ab_t = sched.alpha_bar[t]
            eps_hat = model(x, mask, class_id, np.full(b, t)).data
            x0_hat = predict_x0(x, eps_hat, ab_t)
            if clip_x0:
                x0_hat = np.clip(x0_hat, -1.0, 1.0)
            if i == len(ts) - 1:
                x = x0_hat
                break
            ab_prev = sched.alpha_bar[ts[i + 1]]
            mean = posterior_mean(x, x0_hat, ab_t, ab_prev)
            var = 1.0 - ab_t / ab_prev
            x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("sampler produced non-finite values")
    out = from_model_range(x)
    return out[0] if single else out
