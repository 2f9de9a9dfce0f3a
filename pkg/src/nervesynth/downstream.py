"""Downstream utility: diagnosis classifier and fibre segmenter under three data regimes.

* ``A_real_only``       real training split only
* ``B_hybrid``          real training split plus synthetic samples (1:1 by default)
* ``C_synthetic_only``  synthetic samples only

Evaluation always uses the real held-out test split. Its hash is taken before
training and checked again before scoring.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datagen
from . import tensor as T
from .errors import ConfigError, DataError
from .metrics import accuracy, miou
from .nn import Conv2d, Linear, Module
from .optim import Adam
from .tensor import Tensor

KINDS = ("A_real_only", "B_hybrid", "C_synthetic_only")


@dataclass
class ArraySet:
    images: np.ndarray  # [N, H, W] in [0, 1]
    masks: np.ndarray  # [N, H, W] binary
    labels: np.ndarray  # [N]

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "ArraySet":
        return ArraySet(self.images[idx], self.masks[idx], self.labels[idx])

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.images, self.masks, self.labels):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    @staticmethod
    def concat(sets) -> "ArraySet":
        sets = [s for s in sets if len(s)]
        return ArraySet(np.concatenate([s.images for s in sets]), np.concatenate([s.masks for s in sets]),
                        np.concatenate([s.labels for s in sets]))


def _as_set(source, which: str | None) -> ArraySet:
    if isinstance(source, ArraySet):
        return source
    man = source if isinstance(source, dict) else datagen.load_manifest(source)
    return ArraySet(*datagen.load_arrays(man, which))


@dataclass
class Regime:
    kind: str
    real_manifest: object  # manifest dict / path, or an ArraySet of real training data
    synthetic_manifest: object = None
    hybrid_ratio: float = 1.0  # synthetic samples per real sample
    real_test: object = None  # defaults to the test split of ``real_manifest``
    n_real_per_class: int | None = None  # optional cap on real training samples

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"regime must be one of {KINDS}, got {self.kind!r}")
        if self.kind != "A_real_only" and self.synthetic_manifest is None:
            raise ConfigError(f"{self.kind} needs a synthetic manifest")
        if self.hybrid_ratio < 0:
            raise ConfigError("hybrid_ratio must be >= 0")

    def test_set(self) -> ArraySet:
        src = self.real_test if self.real_test is not None else self.real_manifest
        if isinstance(src, ArraySet):
            return src
        return _as_set(src, "test")

    def real_train(self) -> ArraySet:
        real = _as_set(self.real_manifest, "train")
        if self.n_real_per_class is None:
            return real
        idx = np.concatenate([np.flatnonzero(real.labels == c)[:self.n_real_per_class]
                              for c in np.unique(real.labels)])
        return real.take(np.sort(idx))

    def train_set(self, seed: int) -> ArraySet:
        if self.kind == "A_real_only":
            out = self.real_train()
        else:
            synth = _as_set(self.synthetic_manifest, None)
            if self.kind == "C_synthetic_only":
                out = synth
            else:
                real = self.real_train()
                n = min(len(synth), int(round(self.hybrid_ratio * len(real))))
                pick = np.sort(np.random.default_rng(seed).permutation(len(synth))[:n])
                out = ArraySet.concat([real, synth.take(pick)])
        if len(out) == 0:
            raise DataError(f"{self.kind}: empty training set")
        return out


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------
class Classifier(Module):
    """Three strided conv layers, global average pooling, linear head."""

    def __init__(self, rng: np.random.Generator, n_classes: int = 3, widths=(8, 16, 32)):
        c = [1, *widths]
        self.convs = [Conv2d(a, b, 3, rng, stride=2, padding=1) for a, b in zip(c, c[1:])]
        self.head = Linear(c[-1], n_classes, rng)

    def forward(self, x) -> Tensor:
        h = T.as_tensor(x)
        for conv in self.convs:
            h = T.relu(conv(h))
        return self.head(T.mean(h, axis=(2, 3)))


class Segmenter(Module):
    """Small encoder-decoder with one skip connection; two-class logits per pixel."""

    def __init__(self, rng: np.random.Generator, width: int = 8):
        self.enc1 = Conv2d(1, width, 3, rng, padding=1)
        self.enc2 = Conv2d(width, 2 * width, 3, rng, stride=2, padding=1)
        self.mid = Conv2d(2 * width, 2 * width, 3, rng, padding=1)
        self.dec = Conv2d(3 * width, width, 3, rng, padding=1)
        self.out = Conv2d(width, 2, 1, rng)

    def forward(self, x) -> Tensor:
        e1 = T.relu(self.enc1(T.as_tensor(x)))
        e2 = T.relu(self.mid(T.relu(self.enc2(e1))))
        d = T.relu(self.dec(T.concat([T.upsample2x(e2), e1], axis=1)))
        return self.out(d)


def _inputs(images: np.ndarray) -> np.ndarray:
    return (2.0 * np.asarray(images, dtype=np.float64) - 1.0)[:, None]


def _fit(model: Module, x: np.ndarray, y: np.ndarray, seed: int, epochs: int, batch: int, lr: float):
    rng = np.random.default_rng(seed)
    opt = Adam(model.trainable_parameters(), lr=lr)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            opt.zero_grad()
            loss = T.cross_entropy(model(x[idx]), y[idx])
            loss.backward()
            opt.step()


def _predict(model: Module, x: np.ndarray, batch: int = 128) -> np.ndarray:
    with T.no_grad():
        return np.concatenate([np.argmax(model(x[i:i + batch]).data, axis=1) for i in range(0, len(x), batch)])


@dataclass
class TaskResult:
    regime: str
    seed: int
    metric: float
    n_train: int
    test_hash: str


def train_classifier(regime: Regime, seed: int, epochs: int = 30, batch: int = 16, lr: float = 3e-3,
                     shuffle_labels: bool = False) -> tuple[Classifier, TaskResult]:
    test = regime.test_set()
    before = test.digest()
    train = regime.train_set(seed)
    y = train.labels.copy()
    if shuffle_labels:
        y = np.random.default_rng(seed + 1).permutation(y)
    model = Classifier(np.random.default_rng(seed))
    _fit(model, _inputs(train.images), y, seed, epochs, batch, lr)
    if test.digest() != before:
        raise DataError("held-out test split changed during training")
    acc = accuracy(_predict(model, _inputs(test.images)), test.labels)
    return model, TaskResult(regime.kind, seed, acc, len(train), before)


def train_segmenter(regime: Regime, seed: int, epochs: int = 15, batch: int = 16,
                    lr: float = 3e-3) -> tuple[Segmenter, TaskResult]:
    test = regime.test_set()
    before = test.digest()
    train = regime.train_set(seed)
    model = Segmenter(np.random.default_rng(seed))
    _fit(model, _inputs(train.images), (train.masks > 0).astype(np.int64), seed, epochs, batch, lr)
    if test.digest() != before:
        raise DataError("held-out test split changed during training")
    pred = _predict(model, _inputs(test.images))
    return model, TaskResult(regime.kind, seed, miou(pred, (test.masks > 0).astype(np.int64)), len(train), before)


def run_regimes(regimes, seeds, cls_epochs: int = 30, seg_epochs: int = 15) -> list[dict]:
    """One row per regime: accuracy and mIoU as mean and sample SD over seeds."""
    rows = []
    for reg in regimes:
        accs, ious = [], []
        for s in seeds:
            accs.append(train_classifier(reg, s, cls_epochs)[1].metric)
            ious.append(train_segmenter(reg, s, seg_epochs)[1].metric)
        rows.append({
            "regime": reg.kind, "seeds": list(seeds),
            "accuracy": accs, "accuracy_mean": float(np.mean(accs)),
            "accuracy_sd": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
            "miou": ious, "miou_mean": float(np.mean(ious)),
            "miou_sd": float(np.std(ious, ddof=1)) if len(ious) > 1 else 0.0,
        })
    return rows


def format_rows(rows) -> str:
    lines = [f"{'Regime':<18}  {'Accuracy':>15}  {'mIoU (%)':>15}"]
    for r in rows:
        lines.append(f"{r['regime']:<18}  {r['accuracy_mean']:.3f} ± {r['accuracy_sd']:.3f}    "
                     f"{100 * r['miou_mean']:.2f} ± {100 * r['miou_sd']:.2f}")
    return "\n".join(lines)


def write_rows(rows, path: str | Path) -> None:
    Path(path).write_text(json.dumps(rows, indent=1, sort_keys=True))
