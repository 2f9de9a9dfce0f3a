"""Image fidelity (FID, PSNR, SSIM), feature-space diversity and task scores."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial.distance import pdist

from . import tensor as T
from .errors import UndefinedValueError
from .tensor import ShapeError, Tensor

SSIM_WINDOW = 8
K1, K2 = 0.01, 0.03


class FeatureExtractor:
    """Frozen random 3-layer strided convnet, global-average pooled to ``dim`` features.

    Stands in for a pretrained perceptual network, so scores built on it are
    comparable with each other but not with published values.
    """

    def __init__(self, seed: int = 0, dim: int = 64, widths=(16, 32)):
        rng = np.random.default_rng(seed)
        chans = [1, *widths, dim]
        self.seed = seed
        self.dim = dim
        self.weights = []
        for c_in, c_out in zip(chans, chans[1:]):
            std = math.sqrt(2.0 / (c_in * 9))
            self.weights.append((rng.normal(0.0, std, size=(c_out, c_in, 3, 3)),
                                 rng.normal(0.0, 0.1, size=c_out)))

    def __call__(self, images, batch: int = 256) -> np.ndarray:
        imgs = np.asarray(images, dtype=np.float64)
        if imgs.ndim == 2:
            imgs = imgs[None]
        out = []
        with T.no_grad():
            for i in range(0, len(imgs), batch):
                x = Tensor(2.0 * imgs[i:i + batch, None] - 1.0)
                for w, b in self.weights:
                    x = T.relu(T.conv2d(x, Tensor(w), Tensor(b), stride=2, padding=1))
                out.append(x.data.mean(axis=(2, 3)))
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.dim))


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "GaussianStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise UndefinedValueError("need at least two feature vectors for a covariance")
        sigma = np.cov(feats, rowvar=False)
        sigma = np.atleast_2d(sigma)
        return cls(feats.mean(axis=0), (sigma + sigma.T) / 2.0)


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def fid(real: GaussianStats, gen: GaussianStats) -> float:
    """Frechet distance between two Gaussians.

    The cross term uses the symmetric form ``sqrtm(S_r^1/2 S_g S_r^1/2)``;
    negative eigenvalues from round-off are clamped to zero.
    """
    mu_r, mu_g = np.atleast_1d(real.mu), np.atleast_1d(gen.mu)
    s_r, s_g = np.atleast_2d(real.sigma), np.atleast_2d(gen.sigma)
    if mu_r.shape != mu_g.shape or s_r.shape != s_g.shape or s_r.shape != (mu_r.size, mu_r.size):
        raise ShapeError(f"stats dims differ: {mu_r.shape}/{s_r.shape} vs {mu_g.shape}/{s_g.shape}")
    root_r = _psd_sqrt(s_r)
    mid = root_r @ s_g @ root_r
    vals = np.linalg.eigvalsh((mid + mid.T) / 2.0)
    cross = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    diff = mu_r - mu_g
    return max(float(diff @ diff + np.trace(s_r) + np.trace(s_g) - 2.0 * cross), 0.0)


def fid_from_images(real_imgs, gen_imgs, extractor: FeatureExtractor | None = None) -> float:
    ex = extractor or FeatureExtractor()
    return fid(GaussianStats.from_features(ex(real_imgs)), GaussianStats.from_features(ex(gen_imgs)))


def psnr(x, y, max_val: float = 1.0) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"psnr shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def ssim(x, y, max_val: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid ``window x window`` uniform windows."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"ssim shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < window:
        raise ShapeError(f"image {x.shape} smaller than the {window}x{window} window")
    c1 = (K1 * max_val) ** 2
    c2 = (K2 * max_val) ** 2
    wx = sliding_window_view(x, (window, window))
    wy = sliding_window_view(y, (window, window))
    mx = wx.mean(axis=(2, 3))
    my = wy.mean(axis=(2, 3))
    vx = (wx ** 2).mean(axis=(2, 3)) - mx ** 2
    vy = (wy ** 2).mean(axis=(2, 3)) - my ** 2
    cov = (wx * wy).mean(axis=(2, 3)) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx ** 2 + my ** 2 + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def _group(features, labels=None) -> dict:
    if labels is None:
        return {k: np.asarray(v, dtype=np.float64) for k, v in dict(features).items()}
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    return {k.item(): features[labels == k] for k in np.unique(labels)}


def intra_class_diversity(features, labels=None) -> dict:
    """Mean pairwise Euclidean distance within each class.

    Takes either a ``{class: [n, F]}`` mapping or a feature matrix plus labels.
    """
    out = {}
    for k, f in _group(features, labels).items():
        if len(f) < 2:
            raise UndefinedValueError(f"class {k!r} has fewer than two samples")
        out[k] = float(np.mean(pdist(f.reshape(len(f), -1))))
    return out


def inter_class_separability(features, labels=None) -> float:
    """Mean distance between class centroids over mean within-class RMS spread."""
    groups = _group(features, labels)
    if len(groups) < 2:
        raise UndefinedValueError("separability needs at least two classes")
    cents = np.stack([g.mean(axis=0) for g in groups.values()])
    between = float(np.mean(pdist(cents)))
    spread = float(np.mean([math.sqrt(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)))
                            for g in groups.values()]))
    if spread == 0.0:
        return math.inf
    return between / spread


def relative_difference(a: float, b: float) -> float:
    m = max(a, b)
    if m == 0:
        return 0.0
    return abs(a - b) / m


def miou(pred, true, n_classes: int = 2) -> float:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError(f"miou shape mismatch {pred.shape} vs {true.shape}")
    ious = []
    for c in range(n_classes):
        p, t = pred == c, true == c
        union = np.count_nonzero(p | t)
        if union:
            ious.append(np.count_nonzero(p & t) / union)
    if not ious:
        raise UndefinedValueError("every class has an empty union")
    return float(np.mean(ious))


def class_iou(pred, true, cls: int = 1) -> float:
    p, t = np.asarray(pred) == cls, np.asarray(true) == cls
    union = np.count_nonzero(p | t)
    return np.count_nonzero(p & t) / union if union else math.nan


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ShapeError(f"accuracy length mismatch {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))
