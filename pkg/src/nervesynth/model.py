"""Toy multimodal diffusion transformer (MMDiT) denoiser.

The noisy image and the nerve mask are stacked as two channels, cut into
patches and linearly embedded. A learned class token and a timestep token are
appended, and every block runs self-attention over the joint sequence
``[image tokens ; condition tokens]`` before a shared MLP. The image tokens
are projected back to per-pixel noise predictions.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .adapt import DEFAULT_TARGETS, AdapterReport, attach_adapters
from .bundle import read_bundle, write_bundle
from .errors import ConfigError
from .nn import LayerNorm, Linear, Module, load_state_dict
from .tensor import ShapeError, Tensor

CLASS_NAMES = ("control", "t1nodpn", "t1dpn")


@dataclass
class MmditConfig:
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    n_classes: int = 3
    in_channels: int = 2
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be divisible by patch_size")
        if self.embed_dim % self.n_heads:
            raise ConfigError("embed_dim must be divisible by n_heads")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.in_channels


@dataclass
class ConditionBundle:
    """Conditioning for one sample: binary mask, class id and diffusion timestep."""
    mask: np.ndarray
    class_id: int
    timestep: int = 0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ConfigError("mask entries must be 0 or 1")
        if self.class_id not in (0, 1, 2):
            raise ConfigError(f"class_id must be 0, 1 or 2, got {self.class_id}")


# ---------------------------------------------------------------------------
# tokenisation
# ---------------------------------------------------------------------------
def patchify_pixels(x: Tensor, patch: int) -> Tensor:
    """``[B, H, W, C]`` -> ``[B, (H/p)(W/p), p*p*C]``."""
    b, h, w, c = x.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible by patch {patch}")
    g, gw = h // patch, w // patch
    x = T.reshape(x, (b, g, patch, gw, patch, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (b, g * gw, patch * patch * c))


def unpatchify_pixels(tokens: Tensor, patch: int, size: int, channels: int) -> Tensor:
    """Inverse of :func:`patchify_pixels`."""
    b, n, _ = tokens.shape
    g = size // patch
    if n != g * g:
        raise ShapeError(f"{n} tokens do not tile a {size}x{size} image with patch {patch}")
    x = T.reshape(tokens, (b, g, g, patch, patch, channels))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (b, size, size, channels))


def timestep_features(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------
class Attention(Module):
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        self.q = Linear(dim, dim, rng, role="q")
        self.k = Linear(dim, dim, rng, role="k")
        self.v = Linear(dim, dim, rng, role="v")
        self.out_proj = Linear(dim, dim, rng, role="out_proj")
        self._n_heads = n_heads

    def forward(self, x: Tensor, return_weights: bool = False):
        b, s, d = x.shape
        h = self._n_heads
        dh = d // h

        def heads(t):
            return T.transpose(T.reshape(t, (b, s, h, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        weights = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (b, s, d))
        out = self.out_proj(ctx)
        return (out, weights.data) if return_weights else out


def joint_attention(img_tokens: Tensor, cond_tokens: Tensor, attn: Attention,
                    return_weights: bool = False):
    """Self-attention over the concatenated sequence, split back per modality.

    Returns ``(img_out, cond_out)`` or ``(img_out, cond_out, weights)``.
    """
    if img_tokens.shape[-1] != cond_tokens.shape[-1]:
        raise ShapeError(f"embed dims differ: {img_tokens.shape[-1]} vs {cond_tokens.shape[-1]}")
    n_img = img_tokens.shape[1]
    seq = T.concat([img_tokens, cond_tokens], axis=1)
    out, weights = attn(seq, return_weights=True)
    img_out, cond_out = out[:, :n_img], out[:, n_img:]
    return (img_out, cond_out, weights) if return_weights else (img_out, cond_out)


class Block(Module):
    def __init__(self, dim: int, n_heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = Attention(dim, n_heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp_in = Linear(dim, dim * mlp_ratio, rng, role="mlp_in")
        self.mlp_out = Linear(dim * mlp_ratio, dim, rng, role="mlp_out")

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp_out(T.gelu(self.mlp_in(self.ln2(x))))


class Mmdit(Module):
    def __init__(self, config: MmditConfig | None = None):
        self.config = cfg = config or MmditConfig()
        rng = np.random.default_rng(cfg.seed)
        d = cfg.embed_dim
        self.patch_embed = Linear(cfg.patch_dim, d, rng, role="patch_embed")
        self.pos_img = Tensor(rng.normal(0.0, 0.1, size=(cfg.n_patches, d)), requires_grad=True)
        self.pos_cond = Tensor(rng.normal(0.0, 0.1, size=(2, d)), requires_grad=True)
        self.class_emb = Tensor(rng.normal(0.0, 1.0, size=(cfg.n_classes, d)), requires_grad=True)
        self.time_in = Linear(d, d, rng, role="time_in")
        self.time_out = Linear(d, d, rng, role="time_out")
        self.blocks = [Block(d, cfg.n_heads, cfg.mlp_ratio, rng) for _ in range(cfg.n_blocks)]
        self.final_ln = LayerNorm(d)
        self.head = Linear(d, cfg.patch_size ** 2, rng, role="head")
        self._adapters: dict | None = None

    # -- pieces exposed for testing -------------------------------------------
    def patchify(self, img) -> Tensor:
        """Embed ``[B, H, W, C]`` pixels into ``[B, N, embed_dim]`` tokens."""
        img = T.as_tensor(img)
        cfg = self.config
        if img.ndim != 4 or img.shape[1] != cfg.image_size or img.shape[2] != cfg.image_size:
            raise ShapeError(f"expected [B, {cfg.image_size}, {cfg.image_size}, C], got {img.shape}")
        return self.patch_embed(patchify_pixels(img, cfg.patch_size))

    def cond_tokens(self, class_id, t) -> Tensor:
        class_id = np.asarray(class_id, dtype=np.int64)
        if class_id.min() < 0 or class_id.max() >= self.config.n_classes:
            raise ConfigError(f"class_id out of range 0..{self.config.n_classes - 1}: {class_id}")
        d = self.config.embed_dim
        cls = T.embedding(self.class_emb, class_id)
        temb = self.time_out(T.gelu(self.time_in(Tensor(timestep_features(t, d)))))
        toks = T.concat([T.reshape(cls, (-1, 1, d)), T.reshape(temb, (-1, 1, d))], axis=1)
        return toks + self.pos_cond

    def forward(self, x_t, mask, class_id, t) -> Tensor:
        """Predict the noise in ``x_t`` (``[B, H, W]``) given mask, class and timestep."""
        x_t = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        if x_t.ndim == 2:
            x_t, mask = x_t[None], mask[None]
        if x_t.shape != mask.shape:
            raise ShapeError(f"image {x_t.shape} and mask {mask.shape} differ")
        cfg = self.config
        b = x_t.shape[0]
        class_id = np.broadcast_to(np.asarray(class_id, dtype=np.int64), (b,))
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
        pixels = np.stack([x_t, 2.0 * mask - 1.0], axis=-1)
        img = self.patchify(pixels) + self.pos_img
        seq = T.concat([img, self.cond_tokens(class_id, t)], axis=1)
        for blk in self.blocks:
            seq = blk(seq)
        img_out = seq[:, :cfg.n_patches]
        eps = self.head(self.final_ln(img_out))
        out = unpatchify_pixels(eps, cfg.patch_size, cfg.image_size, 1)
        return T.reshape(out, (b, cfg.image_size, cfg.image_size))

    # -- adapters -------------------------------------------------------------
    def attach(self, kind: str = "wdlora", rank: int = 8, targets=DEFAULT_TARGETS,
               seed: int = 0, scale: float = 1.0, norm_axis: str = "column") -> AdapterReport:
        report = attach_adapters(self, targets, kind, rank, seed, scale, norm_axis)
        self._adapters = {"kind": kind, "rank": rank, "targets": sorted(targets), "seed": seed,
                          "scale": scale, "norm_axis": norm_axis}
        return report

    @property
    def adapters(self) -> dict | None:
        return self._adapters

    def frozen_hash(self) -> str:
        """SHA-256 over all frozen parameters (the base model under fine-tuning)."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            if not p.requires_grad:
                h.update(name.encode())
                h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()


def denoise_predict(model: Mmdit, x_t, bundle: ConditionBundle) -> np.ndarray:
    """Noise prediction for a single sample (no gradient tracking)."""
    with T.no_grad():
        out = model(np.asarray(x_t)[None], bundle.mask[None], [bundle.class_id], [bundle.timestep])
    return out.data[0]


def save_model(model: Mmdit, stem: str | Path, extra: dict | None = None) -> None:
    manifest = {"format": "nervesynth-mmdit-v1", "config": asdict(model.config),
                "adapters": model.adapters}
    if extra:
        manifest["extra"] = extra
    write_bundle(stem, manifest, [(n, p.data) for n, p in model.named_parameters()])


def load_model(stem: str | Path) -> tuple[Mmdit, dict]:
    doc, arrays = read_bundle(stem)
    model = Mmdit(MmditConfig(**doc["config"]))
    ad = doc.get("adapters")
    if ad:
        model.attach(ad["kind"], ad["rank"], set(ad["targets"]), ad["seed"], ad["scale"],
                     ad.get("norm_axis", "column"))
    load_state_dict(model, arrays)
    return model, doc
